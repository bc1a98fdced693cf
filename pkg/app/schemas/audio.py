from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import AudioFormatError, ShapeMismatchError

FOA_CHANNELS = 4  # ACN order W, X, Y, Z
FEATURE_CHANNELS = 7  # 4 log-Mel + 3 intensity vector planes


class WindowType(str, Enum):
    HANN = "hann"
    HAMMING = "hamming"


class StftConfig(BaseModel):
    """Framing and filterbank parameters of the feature front end"""

    model_config = ConfigDict(frozen=True)

    frame_len: float = Field(0.040, gt=0, description="Frame length in seconds")
    hop: float = Field(0.020, gt=0, description="Hop in seconds")
    window: WindowType = WindowType.HANN
    n_mels: int = Field(64, ge=8)

    @model_validator(mode="after")
    def hop_within_frame(self) -> "StftConfig":
        if self.hop > self.frame_len:
            raise ValueError("hop must not exceed frame length")
        return self

    @classmethod
    def from_settings(cls, settings: Any) -> "StftConfig":
        return cls(frame_len=settings.FRAME_LENGTH, hop=settings.HOP_LENGTH, n_mels=settings.N_MELS)

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_len * sample_rate))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop * sample_rate))

    def n_frames(self, n_samples: int, sample_rate: int) -> int:
        """STFT frame count: floor((S - N) / H) + 1."""
        n = self.frame_samples(sample_rate)
        if n_samples < n:
            return 0
        return (n_samples - n) // self.hop_samples(sample_rate) + 1


class AudioClip(BaseModel):
    """4-channel FOA waveform, shape (4, S)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    samples: np.ndarray
    sample_rate: int = Field(24000, gt=0)

    @field_validator("samples")
    @classmethod
    def check_samples(cls, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != FOA_CHANNELS:
            raise AudioFormatError(f"expected ({FOA_CHANNELS}, S) FOA samples, got shape {v.shape}")
        if v.shape[1] < 1:
            raise AudioFormatError("audio has no samples")
        if not np.all(np.isfinite(v)):
            raise AudioFormatError("audio contains non-finite samples")
        v.setflags(write=False)
        return v

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


class Spectrogram(BaseModel):
    """Complex STFT of an FOA clip, shape (4, T_f, K)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray
    sample_rate: int

    @field_validator("data")
    @classmethod
    def check_data(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 3 or v.shape[0] != FOA_CHANNELS:
            raise ShapeMismatchError(f"expected ({FOA_CHANNELS}, T, K) spectrogram, got {v.shape}")
        return v

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]


class SpectralFeatures(BaseModel):
    """Feature tensor of shape (T_f, 7, F)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray

    @field_validator("data")
    @classmethod
    def check_data(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 3 or v.shape[1] != FEATURE_CHANNELS:
            raise ShapeMismatchError(f"expected (T, {FEATURE_CHANNELS}, F) features, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatchError("features contain non-finite values")
        return v

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_mels(self) -> int:
        return self.data.shape[2]

    @property
    def log_mel(self) -> np.ndarray:
        return self.data[:, :FOA_CHANNELS, :]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, FOA_CHANNELS:, :]
