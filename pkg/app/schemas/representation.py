from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import FormatMismatchError, ShapeMismatchError

ACCDOA_TRACKS = 3
ACCDOA_AXES = 4  # x, y, z, distance


class FormatKind(str, Enum):
    MULTI_ACCDOA = "multi-accdoa"
    SED_DOA = "sed-doa"
    SED_SDE = "sed-sde"
    SED_SCE = "sed-sce"
    SED_DOA_SDE = "sed-doa-sde"


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    LINEAR = "linear"


# Branch name, width multiplier of C, activation
_BRANCH_LAYOUT: Dict[FormatKind, Tuple[Tuple[str, int, Activation], ...]] = {
    FormatKind.MULTI_ACCDOA: (("accdoa", ACCDOA_TRACKS * ACCDOA_AXES, Activation.LINEAR),),
    FormatKind.SED_DOA: (("sed", 1, Activation.SIGMOID), ("doa", 3, Activation.TANH)),
    FormatKind.SED_SDE: (("sed", 1, Activation.SIGMOID), ("sde", 1, Activation.RELU)),
    FormatKind.SED_SCE: (("sed", 1, Activation.SIGMOID), ("sce", 3, Activation.LINEAR)),
    FormatKind.SED_DOA_SDE: (
        ("sed", 1, Activation.SIGMOID),
        ("doa", 3, Activation.TANH),
        ("sde", 1, Activation.RELU),
    ),
}


class ReprFormat(BaseModel):
    """Output representation: branch count, widths and activations per format"""

    model_config = ConfigDict(frozen=True)

    kind: FormatKind
    n_classes: int = Field(..., ge=1)
    branch_names: Tuple[str, ...]
    dims: Tuple[int, ...]
    activations: Tuple[Activation, ...]

    @model_validator(mode="after")
    def matches_layout(self) -> "ReprFormat":
        layout = _BRANCH_LAYOUT[self.kind]
        expected_names = tuple(name for name, _, _ in layout)
        expected_dims = tuple(mult * self.n_classes for _, mult, _ in layout)
        expected_acts = tuple(act for _, _, act in layout)
        if (self.branch_names, self.dims, self.activations) != (expected_names, expected_dims, expected_acts):
            raise FormatMismatchError(f"branch layout does not match {self.kind.value} for C={self.n_classes}")
        return self

    @classmethod
    def for_kind(cls, kind: FormatKind, n_classes: int) -> "ReprFormat":
        layout = _BRANCH_LAYOUT[FormatKind(kind)]
        return cls(
            kind=kind,
            n_classes=n_classes,
            branch_names=tuple(name for name, _, _ in layout),
            dims=tuple(mult * n_classes for _, mult, _ in layout),
            activations=tuple(act for _, _, act in layout),
        )

    @property
    def n_branches(self) -> int:
        return len(self.dims)

    @property
    def is_multi_track(self) -> bool:
        return self.kind == FormatKind.MULTI_ACCDOA

    @property
    def max_polyphony(self) -> int:
        return ACCDOA_TRACKS if self.is_multi_track else 1

    @property
    def estimates_doa(self) -> bool:
        return self.kind != FormatKind.SED_SDE

    @property
    def estimates_distance(self) -> bool:
        return self.kind != FormatKind.SED_DOA

    def branch_index(self, name: str) -> int:
        return self.branch_names.index(name)


class TargetTensor(BaseModel):
    """Per-branch arrays of shape (T, N_q) for one clip"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    branches: Tuple[np.ndarray, ...]
    format: ReprFormat

    @field_validator("branches")
    @classmethod
    def finite_2d(cls, v: Tuple[np.ndarray, ...]) -> Tuple[np.ndarray, ...]:
        arrays = tuple(np.asarray(b, dtype=np.float64) for b in v)
        for b in arrays:
            if b.ndim != 2:
                raise ShapeMismatchError(f"branch arrays must be 2-D (T, N), got {b.shape}")
            if not np.all(np.isfinite(b)):
                raise ShapeMismatchError("branch contains non-finite values")
        return arrays

    @model_validator(mode="after")
    def matches_format(self) -> "TargetTensor":
        fmt = self.format
        if len(self.branches) != fmt.n_branches:
            raise ShapeMismatchError(f"{fmt.kind.value} has {fmt.n_branches} branches, got {len(self.branches)}")
        n_frames = {b.shape[0] for b in self.branches}
        if len(n_frames) != 1:
            raise ShapeMismatchError(f"branches disagree on frame count: {sorted(n_frames)}")
        for name, dim, branch in zip(fmt.branch_names, fmt.dims, self.branches):
            if branch.shape[1] != dim:
                raise ShapeMismatchError(f"branch '{name}' expects width {dim}, got {branch.shape[1]}")
            if name == "sed" and (branch.min(initial=0.0) < 0.0 or branch.max(initial=0.0) > 1.0):
                raise ShapeMismatchError("SED branch values must lie in [0, 1]")
            if name == "sde" and branch.min(initial=0.0) < 0.0:
                raise ShapeMismatchError("SDE branch values must be nonnegative")
        return self

    @property
    def n_frames(self) -> int:
        return self.branches[0].shape[0]

    def branch(self, name: str) -> np.ndarray:
        return self.branches[self.format.branch_index(name)]


class DecodeConfig(BaseModel):
    """Thresholds turning network outputs into events"""

    model_config = ConfigDict(frozen=True)

    sed_threshold: float = Field(0.5, ge=0.0, le=1.0)
    accdoa_threshold: float = Field(0.5, ge=0.0)
    min_distance: float = Field(0.01, gt=0.0, description="Meters")

    @classmethod
    def from_settings(cls, settings: Any) -> "DecodeConfig":
        return cls(
            sed_threshold=settings.SED_THRESHOLD,
            accdoa_threshold=settings.ACCDOA_THRESHOLD,
            min_distance=settings.MIN_DISTANCE,
        )
