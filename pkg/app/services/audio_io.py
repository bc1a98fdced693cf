from pathlib import Path
from typing import Optional, Union

import numpy as np
import soundfile as sf
import structlog

from app.core.exceptions import AudioFormatError, StorageError
from app.schemas.audio import FOA_CHANNELS, AudioClip
from app.services.storage import LocalStorage

logger = structlog.get_logger()


def read_audio(path: Union[str, Path], expected_rate: Optional[int] = None) -> AudioClip:
    """
    Read a 4-channel ACN/SN3D WAV file.

    Args:
        path: WAV file (PCM 16/24-bit or 32-bit float)
        expected_rate: Reject files at any other sample rate (no resampling)
    """
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        logger.error("Failed to read audio", path=str(path), error=str(e))
        raise StorageError("cannot read audio", str(path)) from e

    if data.shape[1] != FOA_CHANNELS:
        raise AudioFormatError(f"{path}: expected {FOA_CHANNELS} channels, got {data.shape[1]}")
    if expected_rate is not None and sample_rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {sample_rate} Hz, expected {expected_rate} Hz")

    return AudioClip(samples=data.T, sample_rate=sample_rate)


def write_audio(path: Union[str, Path], clip: AudioClip) -> Path:
    """Write an FOA clip as 32-bit float WAV, atomically."""
    storage = LocalStorage()
    target = storage.resolve(path)
    with storage.atomic_path(target, suffix=".wav") as tmp:
        sf.write(
            str(tmp),
            np.ascontiguousarray(clip.samples.T, dtype=np.float32),
            clip.sample_rate,
            subtype="FLOAT",
            format="WAV",
        )
    return target
