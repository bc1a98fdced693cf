"""
Audio channel swapping (ACS) for FOA recordings.

Each variant is a signed permutation of (X, Y, Z) with W untouched. The
default set is the eight azimuth reflections/rotations generated by swapping
and negating X and Y; elevation flips double it to sixteen on request.
"""

import itertools
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import structlog

from app.core.exceptions import AudioFormatError, ConfigurationError
from app.schemas.audio import FOA_CHANNELS, AudioClip
from app.schemas.augmentation import AcsVariant
from app.schemas.labels import ClassMap, Clip, FrameGrid
from app.services.audio_io import read_audio, write_audio
from app.services.labels import read_labels, write_label_file
from app.services.storage import LocalStorage
from app.tasks.batch import run_batch

logger = structlog.get_logger()

# (source axis for new X, sign), (source axis for new Y, sign)
_XY_MAPS: Tuple[Tuple[Tuple[int, int], Tuple[int, int]], ...] = (
    ((0, 1), (1, 1)),  # (X, Y)
    ((0, 1), (1, -1)),  # (X, -Y)
    ((0, -1), (1, 1)),  # (-X, Y)
    ((0, -1), (1, -1)),  # (-X, -Y)
    ((1, 1), (0, 1)),  # (Y, X)
    ((1, 1), (0, -1)),  # (Y, -X)
    ((1, -1), (0, 1)),  # (-Y, X)
    ((1, -1), (0, -1)),  # (-Y, -X)
)


def _matrix(xy_map, z_sign: int):
    rows = []
    for axis, sign in xy_map:
        row = [0, 0, 0]
        row[axis] = sign
        rows.append(tuple(row))
    rows.append((0, 0, z_sign))
    return tuple(rows)


def acs_variants(include_z_flip: bool = False) -> List[AcsVariant]:
    """Variants 0-7 keep Z; with ``include_z_flip`` variants 8-15 repeat them with Z negated."""
    z_signs = (1, -1) if include_z_flip else (1,)
    return [
        AcsVariant(id=i, matrix=_matrix(xy_map, z_sign))
        for i, (z_sign, xy_map) in enumerate(itertools.product(z_signs, _XY_MAPS))
    ]


def variant_by_id(variant_id: int, include_z_flip: bool = False) -> AcsVariant:
    variants = acs_variants(include_z_flip)
    if not 0 <= variant_id < len(variants):
        raise ConfigurationError(f"ACS variant {variant_id} outside 0..{len(variants) - 1}")
    return variants[variant_id]


def _lookup(matrix: np.ndarray) -> AcsVariant:
    include_z_flip = bool(matrix[2, 2] < 0)
    for v in acs_variants(include_z_flip):
        if np.array_equal(v.channel_op, matrix):
            return v
    raise ValueError("matrix is not an ACS variant")


def inverse_variant(v: AcsVariant) -> AcsVariant:
    """Orthogonal matrices invert by transposition; the set is closed under it."""
    return _lookup(v.channel_op.T)


def compose(first: AcsVariant, second: AcsVariant) -> AcsVariant:
    """Variant equal to applying ``first`` and then ``second``."""
    return _lookup(second.channel_op @ first.channel_op)


def acs_audio(clip: AudioClip, v: AcsVariant) -> AudioClip:
    if clip.samples.shape[0] != FOA_CHANNELS:
        raise AudioFormatError(f"ACS needs {FOA_CHANNELS}-channel FOA audio, got {clip.samples.shape[0]}")
    samples = np.empty_like(clip.samples)
    samples[0] = clip.samples[0]
    # signed permutation: exact copies and negations, no rounding
    for target, row in enumerate(v.matrix):
        source = int(np.flatnonzero(row)[0])
        samples[1 + target] = clip.samples[1 + source] if row[source] > 0 else -clip.samples[1 + source]
    return AudioClip(samples=samples, sample_rate=clip.sample_rate)


def acs_labels(clip: Clip, v: AcsVariant) -> Clip:
    """Rotate/reflect every DOA; distances and activities are unchanged."""
    op = v.label_op
    annotations = []
    for ann in clip.annotations:
        if ann.doa is None:
            annotations.append(ann)
            continue
        doa = tuple(float(c) for c in op @ np.asarray(ann.doa))
        annotations.append(ann.model_copy(update={"doa": doa}))
    return clip.with_annotations(annotations)


def augment_pair(audio: AudioClip, labels: Clip, v: AcsVariant) -> Tuple[AudioClip, Clip]:
    logger.debug("Applying ACS variant", variant=v.id, mapping=v.name)
    return acs_audio(audio, v), acs_labels(labels, v)


def augment_directory(
    in_dir: Union[str, Path],
    out_dir: Union[str, Path],
    variant_ids: Sequence[int],
    classes: ClassMap,
    label_hop: float = 0.1,
    include_z_flip: bool = False,
    max_workers: int = 1,
) -> List[Path]:
    """
    Write ``<stem>_acs<id>.wav/.csv`` for every WAV+CSV pair and requested variant.
    """
    variants = [variant_by_id(i, include_z_flip) for i in variant_ids]
    source = LocalStorage(in_dir)
    target = LocalStorage(out_dir)
    target.ensure_dir()

    def job(wav: Path) -> List[Path]:
        audio = read_audio(wav)
        labels = read_labels(wav.with_suffix(".csv"), FrameGrid.from_duration(audio.duration, label_hop), classes)
        written = []
        for v in variants:
            a, l = augment_pair(audio, labels, v)
            stem = f"{wav.stem}_acs{v.id}"
            written.append(write_audio(target.resolve(f"{stem}.wav"), a))
            write_label_file(target.resolve(f"{stem}.csv"), l)
        return written

    wavs = source.list_files(".", "*.wav")
    per_clip = run_batch(wavs, job, stage="augment", max_workers=max_workers, label=lambda p: p.name)
    return [path for paths in per_clip for path in paths]
