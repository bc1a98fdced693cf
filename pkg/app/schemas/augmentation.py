from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

Matrix3 = Tuple[Tuple[int, int, int], Tuple[int, int, int], Tuple[int, int, int]]


class AcsVariant(BaseModel):
    """
    One audio channel swapping transform.

    ``matrix`` is a signed permutation acting on (X, Y, Z) with W left alone.
    The same matrix maps DOA labels, so audio and labels stay consistent.
    """

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    matrix: Matrix3

    @field_validator("matrix")
    @classmethod
    def signed_permutation(cls, v: Matrix3) -> Matrix3:
        m = np.asarray(v)
        if m.shape != (3, 3) or not np.all(np.isin(m, (-1, 0, 1))):
            raise ValueError("ACS matrix must be a 3x3 signed permutation")
        if not (np.all(np.abs(m).sum(axis=0) == 1) and np.all(np.abs(m).sum(axis=1) == 1)):
            raise ValueError("ACS matrix must be a 3x3 signed permutation")
        return v

    @property
    def channel_op(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64)

    @property
    def label_op(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64)

    @property
    def determinant(self) -> int:
        return int(round(np.linalg.det(self.channel_op)))

    @property
    def name(self) -> str:
        axes = ("X", "Y", "Z")
        parts = []
        for target, row in zip(("x", "y", "z"), self.matrix):
            col = int(np.flatnonzero(row)[0])
            sign = "-" if row[col] < 0 else ""
            parts.append(f"{target}={sign}{axes[col]}")
        return ",".join(parts)
