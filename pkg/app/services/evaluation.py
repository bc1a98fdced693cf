"""
File-level evaluation: pair ground-truth and prediction CSVs and score them.
"""

import csv
import io
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import soundfile as sf
import structlog

from app.core.exceptions import StorageError
from app.schemas.labels import ClassMap, Clip, FrameGrid
from app.schemas.metrics import MetricsReport, MetricThresholds
from app.services.labels import parse_labels
from app.services.metrics import evaluate_many
from app.services.storage import LocalStorage

logger = structlog.get_logger()

PathLike = Union[str, Path]


def _max_frame(text: str) -> int:
    frames = [int(row[0]) for row in csv.reader(io.StringIO(text)) if row and row[0].strip().lstrip("-").isdigit()]
    return max(frames, default=-1)


def infer_grid(
    gt_path: Path,
    gt_text: str,
    pred_text: str,
    label_hop: float,
    duration: Optional[float] = None,
) -> FrameGrid:
    """
    Frame grid shared by a ground-truth/prediction pair.

    Uses ``duration`` when given, then a WAV next to the ground-truth CSV,
    and finally the largest frame index found in either file.
    """
    if duration is not None:
        return FrameGrid(label_hop=label_hop, clip_duration=duration)
    wav = gt_path.with_suffix(".wav")
    if wav.is_file():
        return FrameGrid(label_hop=label_hop, clip_duration=sf.info(str(wav)).duration)
    n_frames = max(_max_frame(gt_text), _max_frame(pred_text)) + 1
    return FrameGrid(label_hop=label_hop, clip_duration=max(n_frames, 1) * label_hop)


def pair_files(gt: PathLike, pred: PathLike) -> List[Tuple[Path, Optional[Path]]]:
    """
    (ground truth, prediction) CSV pairs; directories pair by file name.

    A ground-truth file without a prediction is paired with None and scored
    as an empty prediction.
    """
    gt_path, pred_path = Path(gt), Path(pred)
    if not gt_path.exists():
        raise StorageError("ground truth not found", str(gt_path))
    if not pred_path.exists():
        raise StorageError("predictions not found", str(pred_path))

    if gt_path.is_file():
        if not pred_path.is_file():
            raise StorageError("prediction must be a file when ground truth is a file", str(pred_path))
        return [(gt_path, pred_path)]

    if not pred_path.is_dir():
        raise StorageError("prediction must be a directory when ground truth is a directory", str(pred_path))
    pairs: List[Tuple[Path, Optional[Path]]] = []
    for gt_file in LocalStorage(gt_path).list_files(".", "*.csv"):
        if gt_file.name == "manifest.csv":
            continue
        candidate = pred_path / gt_file.name
        if not candidate.is_file():
            logger.warning("No prediction for clip, scoring as empty", clip=gt_file.name)
        pairs.append((gt_file, candidate if candidate.is_file() else None))
    return pairs


def evaluate_paths(
    gt: PathLike,
    pred: PathLike,
    classes: ClassMap,
    thr: MetricThresholds,
    label_hop: float = 0.1,
    duration: Optional[float] = None,
) -> MetricsReport:
    """Score a CSV pair, or every pair of two directories, as one accumulated report."""
    storage = LocalStorage()
    loaded: List[Tuple[Clip, Clip]] = []
    for gt_file, pred_file in pair_files(gt, pred):
        gt_text = storage.read_text(gt_file)
        pred_text = storage.read_text(pred_file) if pred_file is not None else ""
        grid = infer_grid(gt_file, gt_text, pred_text, label_hop, duration)
        loaded.append(
            (
                parse_labels(gt_text, grid, classes),
                parse_labels(pred_text, grid, classes, allow_missing=True),
            )
        )
    return evaluate_many(loaded, thr)


def report_rows(report: MetricsReport, classes: Optional[ClassMap] = None) -> List[Tuple[str, Optional[float]]]:
    rows: List[Tuple[str, Optional[float]]] = [
        ("f1", report.f1),
        ("doae_deg", report.doae_deg),
        ("rde", report.rde),
        ("distance_error_m", report.distance_error_m),
        ("seld_score", report.seld_score),
        ("sed_sde_score", report.sed_sde_score),
        ("macro_f1", report.macro_f1),
        ("tp", report.tp),
        ("fp", report.fp),
        ("fn", report.fn),
        ("matched_pairs", report.matched_pairs),
    ]
    for class_id, scores in report.class_wise.items():
        name = classes.names[class_id] if classes is not None else str(class_id)
        rows.append((f"class.{name}.f1", scores.f1))
        rows.append((f"class.{name}.doae_deg", scores.doae_deg))
        rows.append((f"class.{name}.rde", scores.rde))
    return rows


def _value(v: Optional[float]) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, int):
        return str(v)
    return f"{v:.4f}"


def format_kv(report: MetricsReport, classes: Optional[ClassMap] = None) -> str:
    """Machine-readable ``key=value`` block."""
    return "\n".join(f"{key}={_value(value)}" for key, value in report_rows(report, classes)) + "\n"


def format_text(report: MetricsReport, classes: Optional[ClassMap] = None) -> str:
    """Aligned two-column table."""
    rows = report_rows(report, classes)
    width = max(len(key) for key, _ in rows)
    return "\n".join(f"{key:<{width}}  {_value(value):>10}" for key, value in rows) + "\n"


def report_dict(report: MetricsReport) -> Dict[str, Optional[float]]:
    return dict(report_rows(report))
