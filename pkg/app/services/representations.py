"""
Encoders and decoders for the five output representations.

Column layouts (C classes):
  SED / SDE branches      column c
  DOA / SCE branches      column axis * C + c, axis in (x, y, z)
  multi-ACCDOA branch     column track * 4C + axis * C + c, axis in (x, y, z, distance)
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from app.core.exceptions import AnnotationError, FormatMismatchError, PolyphonyError, ShapeMismatchError, StorageError
from app.schemas.labels import ClassMap, Clip, EventAnnotation, FrameGrid
from app.schemas.representation import (
    ACCDOA_AXES,
    ACCDOA_TRACKS,
    DecodeConfig,
    FormatKind,
    ReprFormat,
    TargetTensor,
)
from app.services.storage import LocalStorage

logger = structlog.get_logger()

# Below this norm a DOA branch output has no usable direction
DOA_NORM_EPS = 1e-8


def _require(ann: EventAnnotation, doa: bool, distance: bool) -> None:
    if doa and ann.doa is None:
        raise AnnotationError(f"event at frame {ann.frame} class {ann.class_id} has no DOA")
    if distance and ann.distance is None:
        raise AnnotationError(f"event at frame {ann.frame} class {ann.class_id} has no distance")


def encode(clip: Clip, fmt: ReprFormat) -> TargetTensor:
    """
    Encode ground truth into the branch arrays of ``fmt``.

    Inactive (class, frame) cells are zero in every branch. Multi-ACCDOA
    assigns same-class events to tracks in order of appearance.
    """
    n_classes = clip.class_map.n_classes
    if n_classes != fmt.n_classes:
        raise FormatMismatchError(f"clip has {n_classes} classes, format expects {fmt.n_classes}")
    n_frames = clip.grid.n_frames
    C = n_classes
    branches = [np.zeros((n_frames, dim)) for dim in fmt.dims]

    for (class_id, frame), events in clip.by_cell().items():
        if len(events) > fmt.max_polyphony:
            raise PolyphonyError(class_id, frame, len(events), fmt.max_polyphony)

        if fmt.kind == FormatKind.MULTI_ACCDOA:
            for track, ann in enumerate(events):
                _require(ann, doa=True, distance=True)
                a = ann.activity
                values = (*ann.doa, ann.distance)
                for axis in range(ACCDOA_AXES):
                    branches[0][frame, track * ACCDOA_AXES * C + axis * C + class_id] = a * values[axis]
            continue

        ann = events[0]
        a = ann.activity
        branches[fmt.branch_index("sed")][frame, class_id] = a
        if "doa" in fmt.branch_names:
            _require(ann, doa=True, distance=False)
            doa_branch = branches[fmt.branch_index("doa")]
            for axis in range(3):
                doa_branch[frame, axis * C + class_id] = a * ann.doa[axis]
        if "sde" in fmt.branch_names:
            _require(ann, doa=False, distance=True)
            branches[fmt.branch_index("sde")][frame, class_id] = a * ann.distance
        if "sce" in fmt.branch_names:
            _require(ann, doa=True, distance=True)
            sce_branch = branches[fmt.branch_index("sce")]
            for axis in range(3):
                sce_branch[frame, axis * C + class_id] = a * ann.distance * ann.doa[axis]

    return TargetTensor(branches=tuple(branches), format=fmt)


def _default_context(
    pred: TargetTensor,
    grid: Optional[FrameGrid],
    classes: Optional[ClassMap],
) -> Tuple[FrameGrid, ClassMap]:
    C = pred.format.n_classes
    if classes is None:
        classes = ClassMap.of_size(C)
    elif classes.n_classes != C:
        raise ShapeMismatchError(f"class map has {classes.n_classes} classes, prediction has {C}")
    if grid is None:
        grid = FrameGrid(label_hop=0.1, clip_duration=pred.n_frames * 0.1)
    elif grid.n_frames != pred.n_frames:
        raise ShapeMismatchError(f"grid has {grid.n_frames} frames, prediction has {pred.n_frames}")
    return grid, classes


def _xyz(branch: np.ndarray, frame: int, class_id: int, C: int, offset: int = 0) -> np.ndarray:
    return branch[frame, [offset + class_id, offset + C + class_id, offset + 2 * C + class_id]]


def _unit(vector: np.ndarray) -> Optional[Tuple[float, float, float]]:
    norm = float(np.linalg.norm(vector))
    if norm < DOA_NORM_EPS:
        return None
    return tuple(float(v) for v in vector / norm)


def decode(
    pred: TargetTensor,
    cfg: DecodeConfig,
    grid: Optional[FrameGrid] = None,
    classes: Optional[ClassMap] = None,
) -> Clip:
    """
    Turn network outputs into events.

    Args:
        pred: Branch outputs of one clip
        cfg: Thresholds and distance floor
        grid: Frame grid of the clip (defaults to 100 ms frames covering the tensor)
        classes: Class map (defaults to generic names)
    """
    grid, classes = _default_context(pred, grid, classes)
    fmt = pred.format
    C = fmt.n_classes
    events: List[EventAnnotation] = []

    if fmt.kind == FormatKind.MULTI_ACCDOA:
        branch = pred.branches[0]
        for track in range(ACCDOA_TRACKS):
            base = track * ACCDOA_AXES * C
            xyz = np.stack([branch[:, base + axis * C : base + (axis + 1) * C] for axis in range(3)], axis=-1)
            norms = np.linalg.norm(xyz, axis=-1)
            for frame, class_id in zip(*np.nonzero(norms > cfg.accdoa_threshold)):
                distance = max(float(branch[frame, base + 3 * C + class_id]), cfg.min_distance)
                events.append(
                    EventAnnotation(
                        frame=int(frame),
                        class_id=int(class_id),
                        source=track,
                        activity=min(float(norms[frame, class_id]), 1.0),
                        doa=_unit(xyz[frame, class_id]),
                        distance=distance,
                    )
                )
        events.sort(key=lambda a: (a.frame, a.class_id, a.source))
        return Clip(annotations=tuple(events), grid=grid, class_map=classes)

    sed = pred.branch("sed")
    for frame, class_id in zip(*np.nonzero(sed > cfg.sed_threshold)):
        frame, class_id = int(frame), int(class_id)
        doa = None
        distance = None

        if "doa" in fmt.branch_names:
            doa = _unit(_xyz(pred.branch("doa"), frame, class_id, C))
            if doa is None:
                logger.debug("Dropping event with undefined direction", frame=frame, class_id=class_id)
                continue
        if "sde" in fmt.branch_names:
            distance = max(float(pred.branch("sde")[frame, class_id]), cfg.min_distance)
        if "sce" in fmt.branch_names:
            coords = _xyz(pred.branch("sce"), frame, class_id, C)
            norm = float(np.linalg.norm(coords))
            if norm < cfg.min_distance:
                logger.debug("Dropping event at coordinate origin", frame=frame, class_id=class_id)
                continue
            doa = tuple(float(v) for v in coords / max(norm, cfg.min_distance))
            distance = norm

        events.append(
            EventAnnotation(
                frame=frame,
                class_id=class_id,
                activity=float(sed[frame, class_id]),
                doa=doa,
                distance=distance,
            )
        )

    return Clip(annotations=tuple(events), grid=grid, class_map=classes)


def combine_joint(
    sed_doa_pred: TargetTensor,
    sed_sde_pred: TargetTensor,
    cfg: DecodeConfig,
    grid: Optional[FrameGrid] = None,
    classes: Optional[ClassMap] = None,
) -> Clip:
    """
    Merge a SED-DOA and a SED-SDE prediction of the same clip.

    Activity is the mean of both SED branches; direction comes from the
    SED-DOA model and distance from the SED-SDE model.
    """
    if sed_doa_pred.format.kind != FormatKind.SED_DOA:
        raise FormatMismatchError(f"first prediction must be sed-doa, got {sed_doa_pred.format.kind.value}")
    if sed_sde_pred.format.kind != FormatKind.SED_SDE:
        raise FormatMismatchError(f"second prediction must be sed-sde, got {sed_sde_pred.format.kind.value}")
    if sed_doa_pred.format.n_classes != sed_sde_pred.format.n_classes:
        raise ShapeMismatchError("predictions disagree on class count")
    if sed_doa_pred.n_frames != sed_sde_pred.n_frames:
        raise ShapeMismatchError(
            f"predictions disagree on frame count: {sed_doa_pred.n_frames} vs {sed_sde_pred.n_frames}"
        )

    grid, classes = _default_context(sed_doa_pred, grid, classes)
    C = sed_doa_pred.format.n_classes
    activity = (sed_doa_pred.branch("sed") + sed_sde_pred.branch("sed")) / 2.0
    doa_branch = sed_doa_pred.branch("doa")
    sde_branch = sed_sde_pred.branch("sde")

    events: List[EventAnnotation] = []
    for frame, class_id in zip(*np.nonzero(activity > cfg.sed_threshold)):
        frame, class_id = int(frame), int(class_id)
        doa = _unit(_xyz(doa_branch, frame, class_id, C))
        if doa is None:
            logger.debug("Dropping event with undefined direction", frame=frame, class_id=class_id)
            continue
        events.append(
            EventAnnotation(
                frame=frame,
                class_id=class_id,
                activity=float(activity[frame, class_id]),
                doa=doa,
                distance=max(float(sde_branch[frame, class_id]), cfg.min_distance),
            )
        )
    return Clip(annotations=tuple(events), grid=grid, class_map=classes)


def save_targets(path: Union[str, Path], tensor: TargetTensor) -> Path:
    """Store branches as one .npz block each, plus the format descriptor."""
    storage = LocalStorage()
    target = storage.resolve(path)
    blocks: Dict[str, np.ndarray] = {
        f"branch_{i}": branch for i, branch in enumerate(tensor.branches)
    }
    with storage.atomic_path(target, suffix=".npz") as tmp:
        with open(tmp, "wb") as f:
            np.savez(
                f,
                kind=np.array(tensor.format.kind.value),
                n_classes=np.array(tensor.format.n_classes),
                **blocks,
            )
    return target


def load_targets(path: Union[str, Path]) -> TargetTensor:
    try:
        with np.load(str(path), allow_pickle=False) as npz:
            fmt = ReprFormat.for_kind(FormatKind(str(npz["kind"])), int(npz["n_classes"]))
            branches = tuple(npz[f"branch_{i}"] for i in range(fmt.n_branches))
    except (OSError, KeyError, ValueError) as e:
        raise StorageError(f"cannot read target tensor ({e})", str(path)) from e
    return TargetTensor(branches=branches, format=fmt)
