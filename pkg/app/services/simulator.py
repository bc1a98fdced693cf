"""
Synthetic anechoic FOA scenes with exact frame-level labels.

Point sources are encoded in ACN/SN3D (W gain 1) with a 1/d distance gain
relative to 1 m. Event extents snap to the label grid so every labeled frame
carries source energy.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy import signal

from app.core.exceptions import SceneSpecError
from app.schemas.audio import AudioClip
from app.schemas.labels import Clip, EventAnnotation, FrameGrid
from app.schemas.scene import EventSpec, RenderedScene, SceneSpec, SourceKind
from app.services.audio_io import write_audio
from app.services.labels import spherical_to_unit, write_label_file
from app.services.storage import LocalStorage
from app.tasks.batch import run_batch

logger = structlog.get_logger()

REFERENCE_DISTANCE = 1.0  # meters
BAND_LOW_HZ = 200.0
BAND_HIGH_HZ = 8000.0
EDGE_SECONDS = 0.010
PLACEMENT_ATTEMPTS = 200
FILTER_WARMUP = 2048
MANIFEST_NAME = "manifest.csv"


def foa_encode(mono: np.ndarray, azimuth_deg, elevation_deg, distance: float) -> np.ndarray:
    """
    Encode a mono signal as an FOA plane wave, shape (4, n).

    Azimuth/elevation may be scalars or per-sample arrays (moving sources).
    """
    gain = REFERENCE_DISTANCE / distance
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    s = gain * np.asarray(mono, dtype=np.float64)
    return np.stack(
        [
            s,
            s * np.cos(az) * np.cos(el),
            s * np.sin(az) * np.cos(el),
            s * np.sin(el) * np.ones_like(s),
        ]
    )


def _raised_cosine_envelope(n: int, edge: int) -> np.ndarray:
    envelope = np.ones(n)
    edge = min(edge, n // 2)
    if edge > 0:
        # half-sample offset keeps the first and last samples nonzero
        ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(edge) + 0.5) / edge))
        envelope[:edge] = ramp
        envelope[n - edge :] = ramp[::-1]
    return envelope


def class_band(class_id: int, n_classes: int, sample_rate: int) -> Tuple[float, float]:
    """Log-spaced sub-band of 200 Hz - 8 kHz owned by ``class_id``."""
    high = min(BAND_HIGH_HZ, 0.45 * sample_rate)
    edges = np.geomspace(BAND_LOW_HZ, high, n_classes + 1)
    return float(edges[class_id]), float(edges[class_id + 1])


def source_signal(
    kind: SourceKind,
    class_id: int,
    n_classes: int,
    n_samples: int,
    sample_rate: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Unit-RMS excitation with a class-specific spectrum."""
    if kind == SourceKind.NOISE_BURST:
        low, high = class_band(class_id, n_classes, sample_rate)
        sos = signal.butter(4, [low, high], btype="bandpass", fs=sample_rate, output="sos")
        noise = rng.standard_normal(n_samples + FILTER_WARMUP)
        mono = signal.sosfilt(sos, noise)[FILTER_WARMUP:]
    else:
        f0 = 200.0 * 1.5**class_id
        t = np.arange(n_samples) / sample_rate
        mono = np.zeros(n_samples)
        harmonic = 1
        while harmonic * f0 < min(BAND_HIGH_HZ, 0.45 * sample_rate) and harmonic <= 8:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            mono += np.sin(2.0 * np.pi * harmonic * f0 * t + phase) / harmonic
            harmonic += 1
    rms = np.sqrt(np.mean(mono**2))
    return mono / rms if rms > 0 else mono


def _place_events(spec: SceneSpec, n_frames: int, rng: np.random.Generator) -> List[Tuple[int, int, int]]:
    """Pick (class, first frame, end frame) triples that respect the polyphony limits."""
    n_classes = spec.classes.n_classes
    total = np.zeros(n_frames, dtype=int)
    per_class = np.zeros((n_classes, n_frames), dtype=int)
    class_limit = spec.polyphony_max if spec.allow_same_class_overlap else 1
    min_len = max(1, int(round(spec.event_length_range[0] / spec.label_hop)))
    max_len = max(min_len, int(round(spec.event_length_range[1] / spec.label_hop)))
    placed = []

    for index in range(spec.n_events):
        for _ in range(PLACEMENT_ATTEMPTS):
            length = min(int(rng.integers(min_len, max_len + 1)), n_frames)
            start = int(rng.integers(0, n_frames - length + 1))
            class_id = int(rng.integers(0, n_classes))
            span = slice(start, start + length)
            if np.all(total[span] < spec.polyphony_max) and np.all(per_class[class_id, span] < class_limit):
                total[span] += 1
                per_class[class_id, span] += 1
                placed.append((class_id, start, start + length))
                break
        else:
            raise SceneSpecError(
                f"could not place event {index + 1} of {spec.n_events} within "
                f"{spec.duration}s at polyphony {spec.polyphony_max}"
            )
    return placed


def render(spec: SceneSpec) -> RenderedScene:
    """Render one scene; identical specs (seed included) give identical output."""
    rng = np.random.default_rng(spec.seed)
    sr = spec.sample_rate
    grid = FrameGrid(label_hop=spec.label_hop, clip_duration=spec.duration)
    n_frames = grid.n_frames
    n_samples = int(round(spec.duration * sr))
    hop = spec.label_hop * sr
    audio = np.zeros((4, n_samples))
    edge = int(round(EDGE_SECONDS * sr))

    events: List[EventSpec] = []
    annotations: List[EventAnnotation] = []
    sources_in_cell: Dict[Tuple[int, int], int] = {}

    for class_id, first, end in _place_events(spec, n_frames, rng):
        onset = int(round(first * hop))
        offset = min(int(round(end * hop)), n_samples)
        azimuth = float(rng.uniform(-180.0, 180.0))
        elevation = float(rng.uniform(*spec.elevation_range_deg))
        distance = float(rng.uniform(*spec.distance_range))
        speed = float(rng.uniform(-spec.max_angular_speed_deg, spec.max_angular_speed_deg)) if spec.moving else 0.0
        event = EventSpec(
            class_id=class_id,
            onset=onset / sr,
            offset=offset / sr,
            azimuth_deg=azimuth,
            elevation_deg=elevation,
            distance=distance,
            angular_speed_deg=speed,
        )
        events.append(event)

        n = offset - onset
        mono = spec.level * source_signal(spec.source_kind, class_id, spec.classes.n_classes, n, sr, rng)
        mono *= _raised_cosine_envelope(n, edge)
        if spec.moving:
            azimuth_track = event.azimuth_at((onset + np.arange(n)) / sr)
        else:
            azimuth_track = azimuth
        audio[:, onset:offset] += foa_encode(mono, azimuth_track, elevation, distance)

        for frame in range(first, end):
            center = (frame + 0.5) * spec.label_hop
            az = event.azimuth_at(center) if spec.moving else azimuth
            cell = (class_id, frame)
            source = sources_in_cell.get(cell, 0)
            sources_in_cell[cell] = source + 1
            annotations.append(
                EventAnnotation(
                    frame=frame,
                    class_id=class_id,
                    source=source,
                    activity=1.0,
                    doa=spherical_to_unit(az, elevation),
                    distance=distance,
                )
            )

    annotations.sort(key=lambda a: (a.frame, a.class_id, a.source))
    labels = Clip(annotations=tuple(annotations), grid=grid, class_map=spec.classes)
    logger.debug("Scene rendered", seed=spec.seed, events=len(events), labeled_frames=len(annotations))
    return RenderedScene(
        audio=AudioClip(samples=audio, sample_rate=sr),
        labels=labels,
        events=tuple(events),
        seed=spec.seed,
    )


def derive_seeds(master_seed: int, n_clips: int) -> List[int]:
    """Independent per-scene seeds from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n_clips)
    return [int(child.generate_state(1)[0]) for child in children]


def clip_name(index: int) -> str:
    return f"clip_{index:04d}"


def render_dataset(
    template: SceneSpec,
    n_clips: int,
    out_dir: Union[str, Path],
    master_seed: Optional[int] = None,
    max_workers: int = 1,
) -> List[RenderedScene]:
    """
    Render ``n_clips`` scenes into WAV + CSV pairs plus a manifest.

    Args:
        template: Scene recipe; its seed is replaced per clip
        n_clips: Number of clips
        out_dir: Output directory
        master_seed: Seed for the per-clip seeds (defaults to the template seed)
        max_workers: Worker pool size
    """
    storage = LocalStorage(out_dir)
    storage.ensure_dir()
    seeds = derive_seeds(template.seed if master_seed is None else master_seed, n_clips)

    def job(item: Tuple[int, int]) -> RenderedScene:
        index, seed = item
        scene = render(template.model_copy(update={"seed": seed}))
        write_audio(storage.resolve(f"{clip_name(index)}.wav"), scene.audio)
        write_label_file(storage.resolve(f"{clip_name(index)}.csv"), scene.labels)
        return scene

    scenes = run_batch(
        list(enumerate(seeds)),
        job,
        stage="simulate",
        max_workers=max_workers,
        label=lambda item: clip_name(item[0]),
    )

    manifest = pd.DataFrame(
        {
            "clip": [clip_name(i) for i in range(n_clips)],
            "wav": [f"{clip_name(i)}.wav" for i in range(n_clips)],
            "csv": [f"{clip_name(i)}.csv" for i in range(n_clips)],
            "seed": seeds,
            "duration": [template.duration] * n_clips,
        },
        columns=["clip", "wav", "csv", "seed", "duration"],
    )
    storage.write_text(MANIFEST_NAME, manifest.to_csv(index=False, lineterminator="\n"))
    logger.info("Dataset rendered", out_dir=str(storage.root), clips=n_clips)
    return scenes


def read_manifest(dataset_dir: Union[str, Path]) -> pd.DataFrame:
    storage = LocalStorage(dataset_dir)
    path = storage.resolve(MANIFEST_NAME)
    if path.is_file():
        return pd.read_csv(path)
    # directories without a manifest: pair every WAV with its CSV
    wavs = storage.list_files(".", "*.wav")
    return pd.DataFrame(
        {
            "clip": [p.stem for p in wavs],
            "wav": [p.name for p in wavs],
            "csv": [p.with_suffix(".csv").name for p in wavs],
        },
        columns=["clip", "wav", "csv"],
    )
