import math
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import AnnotationError, LabelRangeError

UNIT_NORM_TOLERANCE = 1e-6
MAX_TRACKS = 3

Vector3 = Tuple[float, float, float]


class ClassMap(BaseModel):
    """Ordered, unique sound event class names"""

    model_config = ConfigDict(frozen=True)

    names: Tuple[str, ...] = Field(..., min_length=1)

    @field_validator("names")
    @classmethod
    def names_unique(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(set(v)) != len(v):
            raise ValueError("class names must be unique")
        return v

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "ClassMap":
        return cls(names=tuple(names))

    @classmethod
    def of_size(cls, n_classes: int) -> "ClassMap":
        return cls(names=tuple(f"class_{i}" for i in range(n_classes)))

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


class FrameGrid(BaseModel):
    """Label-frame resolution of a clip"""

    model_config = ConfigDict(frozen=True)

    label_hop: float = Field(0.1, gt=0, description="Seconds per label frame")
    clip_duration: float = Field(..., gt=0, description="Clip length in seconds")

    @property
    def n_frames(self) -> int:
        # rounding guards against 10 / 0.1 landing a hair above 100
        return math.ceil(round(self.clip_duration / self.label_hop, 9))

    @classmethod
    def from_duration(cls, clip_duration: float, label_hop: float = 0.1) -> "FrameGrid":
        return cls(label_hop=label_hop, clip_duration=clip_duration)


class EventAnnotation(BaseModel):
    """
    One event at one label frame.

    Ground truth always carries both ``doa`` and ``distance``. Decoded
    predictions leave out whichever field their format does not estimate.
    """

    model_config = ConfigDict(frozen=True)

    frame: int = Field(..., ge=0)
    class_id: int = Field(..., ge=0)
    source: int = Field(0, ge=0, description="Source/track index within the class-frame")
    activity: float = Field(1.0, ge=0.0, le=1.0)
    doa: Optional[Vector3] = None
    distance: Optional[float] = None

    @model_validator(mode="after")
    def check_geometry(self) -> "EventAnnotation":
        if self.doa is not None:
            norm = math.sqrt(sum(c * c for c in self.doa))
            if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
                raise AnnotationError(
                    f"DOA at frame {self.frame} class {self.class_id} has norm {norm:.9f}, expected 1"
                )
        if self.distance is not None and not self.distance > 0:
            raise AnnotationError(
                f"distance at frame {self.frame} class {self.class_id} must be positive, got {self.distance}"
            )
        return self

    @property
    def is_complete(self) -> bool:
        return self.doa is not None and self.distance is not None


class Clip(BaseModel):
    """Frame-level annotations of one recording"""

    model_config = ConfigDict(frozen=True)

    annotations: Tuple[EventAnnotation, ...] = ()
    grid: FrameGrid
    class_map: ClassMap

    @model_validator(mode="after")
    def check_ranges(self) -> "Clip":
        n_frames = self.grid.n_frames
        n_classes = self.class_map.n_classes
        counts: Dict[Tuple[int, int], int] = defaultdict(int)
        for ann in self.annotations:
            if ann.frame >= n_frames:
                raise LabelRangeError(f"frame {ann.frame} outside grid of {n_frames} frames")
            if ann.class_id >= n_classes:
                raise LabelRangeError(f"class {ann.class_id} outside class map of {n_classes} classes")
            counts[(ann.class_id, ann.frame)] += 1
        for (class_id, frame), count in counts.items():
            if count > MAX_TRACKS:
                raise AnnotationError(
                    f"{count} events for class {class_id} at frame {frame}; at most {MAX_TRACKS} allowed"
                )
        return self

    def by_cell(self) -> Dict[Tuple[int, int], List[EventAnnotation]]:
        """Annotations grouped by (class_id, frame), in order of appearance."""
        cells: Dict[Tuple[int, int], List[EventAnnotation]] = defaultdict(list)
        for ann in self.annotations:
            cells[(ann.class_id, ann.frame)].append(ann)
        return dict(cells)

    def with_annotations(self, annotations: Sequence[EventAnnotation]) -> "Clip":
        return Clip(annotations=tuple(annotations), grid=self.grid, class_map=self.class_map)

    def __len__(self) -> int:
        return len(self.annotations)
