from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.loss import LossConfig
from app.schemas.representation import FormatKind, ReprFormat


class ModelConfig(BaseModel):
    """Trunk and head sizes of the toy SELD network"""

    model_config = ConfigDict(frozen=True)

    format: ReprFormat
    n_mels: int = Field(64, ge=8)
    in_channels: int = 7
    conv_channels: Tuple[int, ...] = (16, 32, 64)
    freq_pool: Tuple[int, ...] = (4, 2, 2)
    seq_hidden: int = Field(128, ge=1)
    head_hidden: int = Field(128, ge=1)
    time_pool: int = Field(5, ge=1, description="STFT frames per label frame")
    distance_init: float = Field(
        1.0, ge=0.0, description="Initial output of zero-initialized ReLU heads, in meters"
    )

    @model_validator(mode="after")
    def pooling_fits(self) -> "ModelConfig":
        if len(self.freq_pool) != len(self.conv_channels):
            raise ValueError("freq_pool needs one factor per conv stage")
        remaining = self.n_mels
        for factor in self.freq_pool:
            if remaining % factor:
                raise ValueError(f"mel bins {self.n_mels} not divisible by pooling {self.freq_pool}")
            remaining //= factor
        return self

    @property
    def pooled_mels(self) -> int:
        remaining = self.n_mels
        for factor in self.freq_pool:
            remaining //= factor
        return remaining


class TrainConfig(BaseModel):
    """Optimizer, schedule and objective of one training run"""

    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(8, ge=1)
    total_steps: int = Field(2000, ge=1)
    peak_lr: float = Field(1e-3, gt=0.0)
    warmup_frac: float = Field(0.1, ge=0.0, le=1.0)
    hold_frac: float = Field(0.4, ge=0.0, le=1.0)
    decay_floor: float = Field(0.05, gt=0.0, le=1.0)
    seed: int = 0
    loss: LossConfig
    step_multiplier: float = Field(1.0, gt=0.0, description="Scales total_steps for this format")
    log_every: int = Field(50, ge=1)
    num_threads: Optional[int] = Field(1, ge=1)

    @model_validator(mode="after")
    def fractions_fit(self) -> "TrainConfig":
        if self.warmup_frac + self.hold_frac > 1.0:
            raise ValueError("warmup_frac + hold_frac must not exceed 1")
        return self

    @property
    def effective_steps(self) -> int:
        return max(1, int(round(self.total_steps * self.step_multiplier)))

    @staticmethod
    def format_step_multiplier(kind: FormatKind) -> float:
        """SED-SDE models train for 100k of the 360k steps used by the other formats."""
        return 100.0 / 360.0 if FormatKind(kind) == FormatKind.SED_SDE else 1.0


class TrainingRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: int
    lr: float
    total: float
    components: Dict[str, float]


class TrainingResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    history: List[TrainingRecord]
    initial_loss: float
    final_loss: float
