"""
Inference over a directory of FOA recordings.

Each clip runs extract -> forward -> decode; the joint method runs a SED-DOA
and a SED-SDE model on the same features and merges their outputs.
"""

from pathlib import Path
from typing import Optional, Union

import pandas as pd
import structlog
import torch

from app.core.exceptions import FormatMismatchError
from app.schemas.audio import StftConfig
from app.schemas.labels import ClassMap, Clip, FrameGrid
from app.schemas.representation import DecodeConfig, FormatKind
from app.services.audio_io import read_audio
from app.services.features import extract
from app.services.labels import write_label_file
from app.services.model import SeldModel
from app.services.representations import combine_joint, decode, save_targets
from app.services.storage import LocalStorage
from app.tasks.batch import run_batch

logger = structlog.get_logger()

MANIFEST_NAME = "manifest.csv"


def _check_classes(model: SeldModel, classes: ClassMap) -> None:
    if model.format.n_classes != classes.n_classes:
        raise FormatMismatchError(
            f"model predicts {model.format.n_classes} classes, class map has {classes.n_classes}"
        )


def predict_clip(
    audio_path: Union[str, Path],
    model: SeldModel,
    stft_cfg: StftConfig,
    decode_cfg: DecodeConfig,
    classes: ClassMap,
    label_hop: float = 0.1,
    sde_model: Optional[SeldModel] = None,
    targets_out: Optional[Path] = None,
) -> Clip:
    """
    Predict events for one recording.

    Args:
        audio_path: FOA WAV file
        model: Trained model (the SED-DOA model for joint prediction)
        stft_cfg: Feature configuration the model was trained with
        decode_cfg: Decoding thresholds
        classes: Class map
        label_hop: Label frame hop in seconds
        sde_model: SED-SDE model; enables joint prediction
        targets_out: Optional .npz path for the raw branch outputs
    """
    audio = read_audio(audio_path)
    grid = FrameGrid.from_duration(audio.duration, label_hop)
    features = extract(audio, stft_cfg)

    with torch.no_grad():
        pred = model.forward(features, grid.n_frames)
        if sde_model is None:
            if targets_out is not None:
                save_targets(targets_out, pred)
            return decode(pred, decode_cfg, grid, classes)
        sde_pred = sde_model.forward(features, grid.n_frames)
    return combine_joint(pred, sde_pred, decode_cfg, grid, classes)


def predict_directory(
    audio_dir: Union[str, Path],
    out_dir: Union[str, Path],
    model: SeldModel,
    stft_cfg: StftConfig,
    decode_cfg: DecodeConfig,
    classes: ClassMap,
    label_hop: float = 0.1,
    sde_model: Optional[SeldModel] = None,
    save_raw: bool = False,
    max_workers: int = 1,
) -> pd.DataFrame:
    """
    Write one prediction CSV per WAV in ``audio_dir`` plus a manifest.

    An empty directory yields an empty manifest.
    """
    _check_classes(model, classes)
    if sde_model is not None:
        if model.format.kind != FormatKind.SED_DOA or sde_model.format.kind != FormatKind.SED_SDE:
            raise FormatMismatchError(
                "joint prediction needs a sed-doa and a sed-sde model, got "
                f"{model.format.kind.value} and {sde_model.format.kind.value}"
            )
        _check_classes(sde_model, classes)

    source = LocalStorage(audio_dir)
    target = LocalStorage(out_dir)
    target.ensure_dir()
    wavs = source.list_files(".", "*.wav")

    def job(wav: Path) -> dict:
        clip = predict_clip(
            wav,
            model,
            stft_cfg,
            decode_cfg,
            classes,
            label_hop=label_hop,
            sde_model=sde_model,
            targets_out=target.resolve(f"{wav.stem}.npz") if save_raw and sde_model is None else None,
        )
        csv_path = write_label_file(target.resolve(f"{wav.stem}.csv"), clip)
        return {"clip": wav.stem, "wav": wav.name, "csv": csv_path.name, "events": len(clip)}

    rows = run_batch(wavs, job, stage="predict", max_workers=max_workers, label=lambda p: p.name)
    manifest = pd.DataFrame(rows, columns=["clip", "wav", "csv", "events"])
    target.write_text(MANIFEST_NAME, manifest.to_csv(index=False, lineterminator="\n"))
    logger.info(
        "Prediction finished",
        clips=len(rows),
        out_dir=str(target.root),
        joint=sde_model is not None,
    )
    return manifest
