from enum import Enum
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.exceptions import FormatMismatchError
from app.schemas.representation import FormatKind


class SdeLossKind(str, Enum):
    MSE = "mse"
    MSPE = "mspe"
    MAPE = "mape"


class LossWeights(BaseModel):
    """Objective weights: beta (SED-DOA), gamma (SED-SDE), eta (SED-SCE), lambda (SED-DOA-SDE)"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    beta: Optional[Tuple[float, float]] = None
    gamma: Optional[Tuple[float, float]] = None
    eta: Optional[Tuple[float, float]] = None
    lam: Optional[Tuple[float, float, float]] = Field(None, alias="lambda")

    @model_validator(mode="after")
    def nonnegative(self) -> "LossWeights":
        for name in ("beta", "gamma", "eta", "lam"):
            values = getattr(self, name)
            if values is None:
                continue
            if any(w < 0 for w in values):
                raise ValueError(f"{name} weights must be nonnegative, got {values}")
            if not any(w > 0 for w in values):
                raise ValueError(f"{name} needs at least one positive weight, got {values}")
        return self

    def for_format(self, kind: FormatKind) -> Tuple[float, ...]:
        """Weights of the objective that trains ``kind``; multi-ACCDOA is unweighted."""
        kind = FormatKind(kind)
        field = _WEIGHT_FIELD.get(kind)
        if field is None:
            return (1.0,)
        values = getattr(self, field)
        if values is None:
            label = "lambda" if field == "lam" else field
            raise FormatMismatchError(f"{kind.value} training needs {label} weights")
        return tuple(values)


_WEIGHT_FIELD: Dict[FormatKind, Optional[str]] = {
    FormatKind.MULTI_ACCDOA: None,
    FormatKind.SED_DOA: "beta",
    FormatKind.SED_SDE: "gamma",
    FormatKind.SED_SCE: "eta",
    FormatKind.SED_DOA_SDE: "lam",
}


class LossConfig(BaseModel):
    """Weights plus the distance objective used by SDE branches"""

    model_config = ConfigDict(frozen=True)

    weights: LossWeights
    sde_kind: SdeLossKind = SdeLossKind.MSE

    @classmethod
    def recommended(cls, kind: FormatKind) -> "LossConfig":
        """Best-known weight and distance-loss pairing for each format."""
        kind = FormatKind(kind)
        if kind == FormatKind.SED_DOA:
            return cls(weights=LossWeights(beta=(0.1, 1.0)))
        if kind == FormatKind.SED_SDE:
            return cls(weights=LossWeights(gamma=(0.1, 2.0)), sde_kind=SdeLossKind.MSPE)
        if kind == FormatKind.SED_SCE:
            return cls(weights=LossWeights(eta=(1.0, 1.0)))
        if kind == FormatKind.SED_DOA_SDE:
            return cls(weights=LossWeights(lam=(0.1, 1.0, 2.0)), sde_kind=SdeLossKind.MSPE)
        return cls(weights=LossWeights())


class LossValue(BaseModel):
    """Weighted total plus each unweighted component"""

    model_config = ConfigDict(frozen=True)

    total: float
    components: Dict[str, float]
    weights: Dict[str, float]

    @model_validator(mode="after")
    def total_is_weighted_sum(self) -> "LossValue":
        expected = sum(self.weights[name] * value for name, value in self.components.items())
        if abs(expected - self.total) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError(f"total {self.total} != weighted sum {expected}")
        return self
