"""
Training loop: Adam with a three-stage learning-rate schedule.

Losses and their gradients are evaluated in numpy on the flattened batch
(B*T rows) and pushed back through the network with ``SeldModel.backward``.
"""

import math
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
import torch

from app.core.exceptions import ShapeMismatchError, TrainingDivergedError
from app.core.logging import log_performance_metric, log_training_step
from app.schemas.audio import SpectralFeatures, StftConfig
from app.schemas.labels import ClassMap, FrameGrid
from app.schemas.representation import FormatKind, ReprFormat, TargetTensor
from app.schemas.training import TrainConfig, TrainingRecord, TrainingResult
from app.services.audio_io import read_audio
from app.services.augmentation import acs_variants, augment_pair
from app.services.features import extract
from app.services.labels import read_labels
from app.services.losses import joint_loss, joint_loss_gradient
from app.services.model import SeldModel
from app.services.representations import encode
from app.services.simulator import read_manifest
from app.services.storage import LocalStorage
from app.tasks.batch import run_batch

logger = structlog.get_logger()

Sample = Tuple[SpectralFeatures, TargetTensor]

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def three_stage_lr(step: int, cfg: TrainConfig) -> float:
    """
    Learning rate at ``step`` (0-based).

    Linear warmup 0 -> peak, constant hold, then exponential decay reaching
    ``decay_floor * peak`` at the final step.
    """
    total = cfg.effective_steps
    warmup = int(round(cfg.warmup_frac * total))
    hold = int(round(cfg.hold_frac * total))
    last = total - 1

    if step < warmup:
        return cfg.peak_lr * step / warmup
    decay_start = warmup + hold
    if step < decay_start:
        return cfg.peak_lr
    decay_len = last - decay_start
    if decay_len <= 0:
        return cfg.peak_lr
    progress = min(step - decay_start, decay_len) / decay_len
    return cfg.peak_lr * cfg.decay_floor**progress


def build_dataset(
    dataset_dir: Union[str, Path],
    fmt: ReprFormat,
    stft_cfg: StftConfig,
    classes: ClassMap,
    label_hop: float = 0.1,
    sample_rate: Optional[int] = None,
    augment: bool = False,
    max_workers: int = 1,
) -> List[Sample]:
    """
    Load every (WAV, CSV) pair of a directory as (features, targets).

    With ``augment`` each clip is expanded by the eight ACS variants. SED-SDE
    datasets are never augmented: ACS leaves every distance label unchanged.
    """
    if augment and fmt.kind == FormatKind.SED_SDE:
        logger.warning("ACS skipped for sed-sde training", reason="distance labels are invariant under ACS")
        augment = False
    storage = LocalStorage(dataset_dir)
    manifest = read_manifest(dataset_dir)
    variants = acs_variants() if augment else []

    def job(row) -> List[Sample]:
        audio = read_audio(storage.resolve(row.wav), expected_rate=sample_rate)
        grid = FrameGrid.from_duration(audio.duration, label_hop)
        labels = read_labels(storage.resolve(row.csv), grid, classes)
        if not variants:
            return [(extract(audio, stft_cfg), encode(labels, fmt))]
        samples = []
        for v in variants:
            a, l = augment_pair(audio, labels, v)
            samples.append((extract(a, stft_cfg), encode(l, fmt)))
        return samples

    rows = list(manifest.itertuples(index=False))
    per_clip = run_batch(rows, job, stage="extract", max_workers=max_workers, label=lambda r: str(r.wav))
    dataset = [sample for samples in per_clip for sample in samples]
    logger.info("Dataset built", clips=len(rows), samples=len(dataset), format=fmt.kind.value)
    return dataset


def _stack(dataset: Sequence[Sample], fmt: ReprFormat) -> Tuple[np.ndarray, List[np.ndarray]]:
    shapes = {(f.data.shape, t.n_frames) for f, t in dataset}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"training clips must share one shape, found {sorted(shapes)}")
    for _, target in dataset:
        if target.format != fmt:
            raise ShapeMismatchError(
                f"dataset targets are {target.format.kind.value}, model predicts {fmt.kind.value}"
            )
    features = np.stack([f.data for f, _ in dataset])
    targets = [np.stack([t.branches[q] for _, t in dataset]) for q in range(fmt.n_branches)]
    return features, targets


def train(model: SeldModel, dataset: Sequence[Sample], cfg: TrainConfig) -> TrainingResult:
    """
    Fit ``model`` on ``dataset`` and return the per-step loss history.

    Deterministic for a given seed on a single thread.

    Raises:
        TrainingDivergedError: the loss became NaN or infinite
    """
    if not dataset:
        raise ShapeMismatchError("training dataset is empty")
    if cfg.num_threads:
        torch.set_num_threads(cfg.num_threads)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    fmt = model.format
    features, targets = _stack(dataset, fmt)
    n_clips, n_label_frames = len(dataset), targets[0].shape[1]
    dtype = next(model.parameters()).dtype
    weights = cfg.loss.weights

    optimizer = torch.optim.Adam(model.parameters(), lr=0.0, betas=ADAM_BETAS, eps=ADAM_EPS)
    history: List[TrainingRecord] = []
    total_steps = cfg.effective_steps
    logger.info(
        "Training started",
        format=fmt.kind.value,
        steps=total_steps,
        clips=n_clips,
        parameters=model.n_parameters(),
    )

    started = time.perf_counter()
    model.train()
    for step in range(total_steps):
        lr = three_stage_lr(step, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr

        batch = rng.choice(n_clips, size=cfg.batch_size, replace=n_clips < cfg.batch_size)
        x = torch.as_tensor(features[batch], dtype=dtype)
        outputs = model.forward_batch(x, n_label_frames)

        B = len(batch)
        preds = [o.detach().cpu().numpy().astype(np.float64).reshape(B * n_label_frames, -1) for o in outputs]
        gts = [t[batch].reshape(B * n_label_frames, -1) for t in targets]
        loss = joint_loss(fmt, preds, gts, weights, cfg.loss.sde_kind)
        if not math.isfinite(loss.total):
            raise TrainingDivergedError(step, loss.total)
        grads = joint_loss_gradient(fmt, preds, gts, weights, cfg.loss.sde_kind)

        param_grads = model.backward(grads)
        for name, param in model.named_parameters():
            param.grad = param_grads[name]
        optimizer.step()

        history.append(TrainingRecord(step=step, lr=lr, total=loss.total, components=loss.components))
        if step % cfg.log_every == 0 or step == total_steps - 1:
            log_training_step(step, lr, loss.total, loss.components)

    model.eval()
    result = TrainingResult(history=history, initial_loss=history[0].total, final_loss=history[-1].total)
    logger.info("Training finished", initial_loss=result.initial_loss, final_loss=result.final_loss)
    log_performance_metric("training_seconds", time.perf_counter() - started, unit="s", format=fmt.kind.value)
    return result


def write_history(path: Union[str, Path], result: TrainingResult) -> Path:
    """Line-oriented training log: step, lr, total and one column per component."""
    rows = [{"step": r.step, "lr": r.lr, "total": r.total, **r.components} for r in result.history]
    return LocalStorage().write_text(path, pd.DataFrame(rows).to_csv(index=False, lineterminator="\n"))
