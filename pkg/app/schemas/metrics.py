from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MetricThresholds(BaseModel):
    """Thresholds that turn a matched pair into a true positive"""

    model_config = ConfigDict(frozen=True)

    angular_deg: float = Field(20.0, gt=0.0, le=180.0)
    relative_distance: float = Field(1.0, gt=0.0)
    use_angular: bool = True
    use_distance: bool = True

    @classmethod
    def from_settings(cls, settings: Any, **overrides: Any) -> "MetricThresholds":
        values = {
            "angular_deg": settings.ANGULAR_THRESHOLD_DEG,
            "relative_distance": settings.RELATIVE_DISTANCE_THRESHOLD,
        }
        values.update(overrides)
        return cls(**values)


class MatchedPair(BaseModel):
    """One ground-truth/prediction pairing within a (class, frame) cell"""

    model_config = ConfigDict(frozen=True)

    frame: int
    class_id: int
    angular_error_deg: Optional[float] = None
    distance_error_m: Optional[float] = None
    relative_distance_error: Optional[float] = None
    within_threshold: bool


class ClassCounts(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn)


class MatchCounts(BaseModel):
    """Detection counts plus matched pairs; merges associatively across clips"""

    model_config = ConfigDict(frozen=True)

    by_class: Dict[int, ClassCounts] = {}
    pairs: List[MatchedPair] = []
    n_gt: int = 0
    n_pred: int = 0

    @property
    def tp(self) -> int:
        return sum(c.tp for c in self.by_class.values())

    @property
    def fp(self) -> int:
        return sum(c.fp for c in self.by_class.values())

    @property
    def fn(self) -> int:
        return sum(c.fn for c in self.by_class.values())

    def merge(self, other: "MatchCounts") -> "MatchCounts":
        by_class = dict(self.by_class)
        for class_id, counts in other.by_class.items():
            by_class[class_id] = by_class.get(class_id, ClassCounts()) + counts
        return MatchCounts(
            by_class=by_class,
            pairs=[*self.pairs, *other.pairs],
            n_gt=self.n_gt + other.n_gt,
            n_pred=self.n_pred + other.n_pred,
        )


class ClassScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    class_id: int
    f1: float
    doae_deg: Optional[float] = None
    rde: Optional[float] = None
    tp: int
    fp: int
    fn: int


class MetricsReport(BaseModel):
    """Frame-based detection, localization and distance scores"""

    model_config = ConfigDict(frozen=True)

    f1: float = Field(..., ge=0.0, le=1.0)
    doae_deg: Optional[float] = Field(None, ge=0.0)
    rde: Optional[float] = Field(None, ge=0.0)
    distance_error_m: Optional[float] = Field(None, ge=0.0)
    seld_score: Optional[float] = None
    sed_sde_score: Optional[float] = None
    macro_f1: Optional[float] = None
    tp: int
    fp: int
    fn: int
    matched_pairs: int
    class_wise: Dict[int, ClassScores] = {}

    @model_validator(mode="after")
    def composites_consistent(self) -> "MetricsReport":
        if self.seld_score is not None:
            if self.doae_deg is None or self.rde is None:
                raise ValueError("SELD score needs both DOAE and RDE")
            expected = ((1.0 - self.f1) + self.doae_deg / 180.0 + self.rde) / 3.0
            if abs(expected - self.seld_score) > 1e-9:
                raise ValueError("SELD score does not match its parts")
        if self.sed_sde_score is not None:
            if self.rde is None:
                raise ValueError("SED-SDE score needs RDE")
            expected = ((1.0 - self.f1) + self.rde) / 2.0
            if abs(expected - self.sed_sde_score) > 1e-9:
                raise ValueError("SED-SDE score does not match its parts")
        return self
