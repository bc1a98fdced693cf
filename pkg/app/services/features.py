"""
FOA feature front end: 4 log-Mel planes plus 3 intensity-vector planes.
"""

from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Union

import librosa
import numpy as np
import structlog

from app.core.exceptions import AudioFormatError, ShapeMismatchError, StorageError
from app.schemas.audio import AudioClip, SpectralFeatures, Spectrogram, StftConfig
from app.services.audio_io import read_audio
from app.services.storage import LocalStorage
from app.tasks.batch import run_batch

logger = structlog.get_logger()

LOG_EPS = 1e-10
IV_EPS = 1e-8


def stft(clip: AudioClip, cfg: StftConfig) -> Spectrogram:
    """
    Framewise FFT of every channel without centering.

    T_f = floor((S - N) / H) + 1 frames of K = N / 2 + 1 bins, where N and H are
    the frame and hop lengths in samples.
    """
    n_fft = cfg.frame_samples(clip.sample_rate)
    hop = cfg.hop_samples(clip.sample_rate)
    if clip.n_samples < n_fft:
        raise AudioFormatError(f"clip has {clip.n_samples} samples, shorter than one {n_fft}-sample frame")

    spec = librosa.stft(
        clip.samples,
        n_fft=n_fft,
        hop_length=hop,
        win_length=n_fft,
        window=cfg.window.value,
        center=False,
        dtype=np.complex128,
    )
    # librosa returns (channels, bins, frames)
    return Spectrogram(data=np.transpose(spec, (0, 2, 1)), sample_rate=clip.sample_rate)


@lru_cache(maxsize=16)
def _cached_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    fb = librosa.filters.mel(
        sr=sample_rate,
        n_fft=n_fft,
        n_mels=n_mels,
        fmin=0.0,
        fmax=sample_rate / 2.0,
        htk=True,
        norm=None,
        dtype=np.float64,
    )
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: StftConfig, sample_rate: int) -> np.ndarray:
    """HTK-scale triangular filterbank of shape (n_mels, K) spanning 0 Hz to Nyquist."""
    return _cached_filterbank(sample_rate, cfg.frame_samples(sample_rate), cfg.n_mels)


def _filterbank_for(spec: Spectrogram, cfg: StftConfig) -> np.ndarray:
    fb = mel_filterbank(cfg, spec.sample_rate)
    if fb.shape[1] != spec.n_bins:
        raise ShapeMismatchError(f"spectrogram has {spec.n_bins} bins, filterbank expects {fb.shape[1]}")
    return fb


def log_mel(spec: Spectrogram, cfg: StftConfig) -> np.ndarray:
    """Natural-log mel power, shape (4, T_f, n_mels)."""
    fb = _filterbank_for(spec, cfg)
    power = np.abs(spec.data) ** 2
    return np.log(power @ fb.T + LOG_EPS)


def intensity_vectors(spec: Spectrogram, cfg: StftConfig) -> np.ndarray:
    """
    Mel-aggregated active intensity, shape (3, T_f, n_mels).

    Per bin I = Re{conj(W) (X, Y, Z)}, summed into mel bands with the log-Mel
    filterbank and then scaled by 1 / (|I| + eps) so every 3-vector has norm <= 1.
    """
    fb = _filterbank_for(spec, cfg)
    w = spec.data[0]
    intensity = np.real(np.conj(w)[np.newaxis] * spec.data[1:])
    intensity_mel = intensity @ fb.T
    norm = np.sqrt(np.sum(intensity_mel**2, axis=0, keepdims=True))
    return intensity_mel / (norm + IV_EPS)


def extract(clip: AudioClip, cfg: StftConfig) -> SpectralFeatures:
    """Stack log-Mel and intensity planes into a (T_f, 7, n_mels) tensor."""
    spec = stft(clip, cfg)
    planes = np.concatenate([log_mel(spec, cfg), intensity_vectors(spec, cfg)], axis=0)
    return SpectralFeatures(data=np.ascontiguousarray(np.transpose(planes, (1, 0, 2))))


def dominant_direction(features: SpectralFeatures) -> np.ndarray:
    """
    Energy-weighted mean intensity direction over all frames and mel bands.

    Returns a unit vector, or zeros when the clip carries no directional energy.
    """
    weights = np.exp(features.log_mel[:, 0, :]) - LOG_EPS
    weights = np.clip(weights, 0.0, None)
    direction = np.einsum("tf,tcf->c", weights, features.intensity)
    norm = np.linalg.norm(direction)
    return direction / norm if norm > 0 else direction


def extract_file(path: Union[str, Path], cfg: StftConfig, expected_rate: Optional[int] = None) -> SpectralFeatures:
    clip = read_audio(path, expected_rate=expected_rate)
    features = extract(clip, cfg)
    logger.debug("Features extracted", path=str(path), frames=features.n_frames)
    return features


def save_features(path: Union[str, Path], features: SpectralFeatures) -> Path:
    """Dump features as .npy (the header records shape and dtype)."""
    storage = LocalStorage()
    target = storage.resolve(path)
    with storage.atomic_path(target, suffix=".npy") as tmp:
        with open(tmp, "wb") as f:
            np.save(f, features.data)
    return target


def load_features(path: Union[str, Path]) -> SpectralFeatures:
    try:
        data = np.load(str(path), allow_pickle=False)
    except (OSError, ValueError) as e:
        raise StorageError("cannot read feature tensor", str(path)) from e
    return SpectralFeatures(data=data)


def extract_directory(
    in_dir: Union[str, Path],
    out_dir: Union[str, Path],
    cfg: StftConfig,
    expected_rate: Optional[int] = None,
    max_workers: int = 1,
) -> List[Path]:
    """Write ``<stem>.npy`` features for every WAV in ``in_dir``."""
    source = LocalStorage(in_dir)
    target = LocalStorage(out_dir)
    target.ensure_dir()

    def job(wav: Path) -> Path:
        return save_features(target.resolve(f"{wav.stem}.npy"), extract_file(wav, cfg, expected_rate))

    return run_batch(source.list_files(".", "*.wav"), job, stage="extract", max_workers=max_workers, label=lambda p: p.name)
