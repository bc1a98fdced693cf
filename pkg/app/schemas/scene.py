from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.audio import AudioClip
from app.schemas.labels import MAX_TRACKS, ClassMap, Clip


class SourceKind(str, Enum):
    NOISE_BURST = "noise-burst"
    TONE_COMPLEX = "tone-complex"


class SceneSpec(BaseModel):
    """Recipe for one synthetic anechoic FOA scene"""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(0, ge=0)
    duration: float = Field(10.0, gt=0.0, description="Seconds")
    n_events: int = Field(4, ge=0)
    classes: ClassMap
    distance_range: Tuple[float, float] = (0.5, 4.0)
    polyphony_max: int = Field(2, ge=1, le=MAX_TRACKS)
    source_kind: SourceKind = SourceKind.NOISE_BURST
    sample_rate: int = Field(24000, gt=0)
    label_hop: float = Field(0.1, gt=0.0)
    event_length_range: Tuple[float, float] = (1.0, 3.0)
    elevation_range_deg: Tuple[float, float] = (-45.0, 45.0)
    moving: bool = False
    max_angular_speed_deg: float = Field(30.0, ge=0.0, description="Degrees per second when moving")
    allow_same_class_overlap: bool = False
    level: float = Field(0.1, gt=0.0, description="RMS of each source signal at 1 m")

    @model_validator(mode="after")
    def check_ranges(self) -> "SceneSpec":
        d_min, d_max = self.distance_range
        if not 0 < d_min <= d_max:
            raise ValueError(f"distance range must satisfy 0 < d_min <= d_max, got {self.distance_range}")
        l_min, l_max = self.event_length_range
        if not 0 < l_min <= l_max:
            raise ValueError(f"event length range must satisfy 0 < min <= max, got {self.event_length_range}")
        if l_min > self.duration:
            raise ValueError("shortest event does not fit inside the clip")
        e_min, e_max = self.elevation_range_deg
        if not -90.0 <= e_min <= e_max <= 90.0:
            raise ValueError(f"elevation range must lie in [-90, 90], got {self.elevation_range_deg}")
        return self


class EventSpec(BaseModel):
    """A placed source: class, time extent and trajectory"""

    model_config = ConfigDict(frozen=True)

    class_id: int
    onset: float
    offset: float
    azimuth_deg: float
    elevation_deg: float
    distance: float
    angular_speed_deg: float = 0.0

    def azimuth_at(self, t: float) -> float:
        return self.azimuth_deg + self.angular_speed_deg * (t - self.onset)


class RenderedScene(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    audio: AudioClip
    labels: Clip
    events: Tuple[EventSpec, ...] = ()
    seed: Optional[int] = None
