"""
Label CSV exchange.

Rows are ``frame,class,source,azimuth_deg,elevation_deg,distance_m``. Azimuth
runs counterclockwise from +x, elevation is positive upwards; angles are
degrees in files and unit vectors in memory.
"""

import csv
import io
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import structlog

from app.core.exceptions import AnnotationError, LabelParseError, LabelRangeError
from app.schemas.labels import ClassMap, Clip, EventAnnotation, FrameGrid, Vector3
from app.services.storage import LocalStorage

logger = structlog.get_logger()

N_COLUMNS = 6


def spherical_to_unit(azimuth_deg: float, elevation_deg: float) -> Vector3:
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return (math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el))


def unit_to_spherical(doa: Vector3) -> Tuple[float, float]:
    x, y, z = doa
    azimuth = math.degrees(math.atan2(y, x))
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, z))))
    return azimuth, elevation


def _parse_int(value: str, column: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise LabelParseError(f"{column} '{value}' is not an integer", line) from None


def _parse_float(value: str, column: str, line: int) -> float:
    try:
        result = float(value)
    except ValueError:
        raise LabelParseError(f"{column} '{value}' is not a number", line) from None
    if not math.isfinite(result):
        raise LabelParseError(f"{column} '{value}' is not finite", line)
    return result


def parse_labels(
    text: str,
    grid: FrameGrid,
    classes: ClassMap,
    allow_missing: bool = False,
) -> Clip:
    """
    Parse label CSV content into a Clip.

    Args:
        text: CSV content, one event-frame per row, no header
        grid: Label frame grid of the clip
        classes: Class map the class column indexes into
        allow_missing: Accept empty angle or distance fields (predictions from
            models that do not estimate that quantity)
    """
    annotations: List[EventAnnotation] = []

    for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != N_COLUMNS:
            raise LabelParseError(f"expected {N_COLUMNS} columns, got {len(row)}", line_no)
        cells = [cell.strip() for cell in row]

        frame = _parse_int(cells[0], "frame", line_no)
        class_id = _parse_int(cells[1], "class", line_no)
        source = _parse_int(cells[2], "source", line_no)
        if frame < 0 or frame >= grid.n_frames:
            raise LabelRangeError(f"frame {frame} outside [0, {grid.n_frames})", line_no)
        if class_id < 0 or class_id >= classes.n_classes:
            raise LabelRangeError(f"class {class_id} outside [0, {classes.n_classes})", line_no)
        if source < 0:
            raise LabelRangeError(f"source {source} is negative", line_no)

        doa: Optional[Vector3] = None
        if cells[3] or cells[4] or not allow_missing:
            azimuth = _parse_float(cells[3], "azimuth", line_no)
            elevation = _parse_float(cells[4], "elevation", line_no)
            doa = spherical_to_unit(azimuth, elevation)

        distance: Optional[float] = None
        if cells[5] or not allow_missing:
            distance = _parse_float(cells[5], "distance", line_no)
            if distance <= 0:
                raise AnnotationError(f"line {line_no}: distance must be positive, got {distance}")

        annotations.append(
            EventAnnotation(
                frame=frame,
                class_id=class_id,
                source=source,
                activity=1.0,
                doa=doa,
                distance=distance,
            )
        )

    return Clip(annotations=tuple(annotations), grid=grid, class_map=classes)


def _fmt(value: float) -> str:
    # + 0.0 folds negative zero
    return np.format_float_positional(round(value, 6) + 0.0, trim="-")


def write_labels(clip: Clip) -> str:
    """Serialize a Clip to label CSV content (LF line endings, no header)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for ann in sorted(clip.annotations, key=lambda a: (a.frame, a.class_id, a.source)):
        if ann.doa is not None:
            azimuth, elevation = unit_to_spherical(ann.doa)
            angle_cells = [_fmt(azimuth), _fmt(elevation)]
        else:
            angle_cells = ["", ""]
        distance_cell = _fmt(ann.distance) if ann.distance is not None else ""
        writer.writerow([ann.frame, ann.class_id, ann.source, *angle_cells, distance_cell])
    return buffer.getvalue()


def read_labels(
    path: Union[str, Path],
    grid: FrameGrid,
    classes: ClassMap,
    allow_missing: bool = False,
) -> Clip:
    text = LocalStorage().read_text(path)
    try:
        return parse_labels(text, grid, classes, allow_missing=allow_missing)
    except (LabelParseError, LabelRangeError, AnnotationError) as e:
        logger.error("Failed to parse label file", path=str(path), error=e.message)
        raise


def write_label_file(path: Union[str, Path], clip: Clip) -> Path:
    target = LocalStorage().write_text(path, write_labels(clip))
    logger.debug("Label file written", path=str(target), events=len(clip))
    return target
