import math

import numpy as np
import pytest
import structlog

from app.schemas.labels import ClassMap, Clip, EventAnnotation, FrameGrid
from app.services.labels import spherical_to_unit


@pytest.fixture(autouse=True)
def quiet_logging():
    structlog.configure(wrapper_class=structlog.make_filtering_bound_logger(40))
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def classes():
    return ClassMap.of_size(3)


@pytest.fixture
def grid():
    return FrameGrid(label_hop=0.1, clip_duration=1.0)


def random_doa(rng: np.random.Generator):
    azimuth = float(rng.uniform(-180.0, 180.0))
    # keep away from the poles so azimuth round trips are well conditioned
    elevation = float(rng.uniform(-80.0, 80.0))
    return spherical_to_unit(azimuth, elevation)


@pytest.fixture
def make_clip(classes, grid):
    """Factory for random valid clips; ``max_per_cell`` bounds same-class polyphony."""

    def _make(rng, max_per_cell=1, density=0.4, n_classes=None, n_frames=None, activity=1.0):
        cmap = classes if n_classes is None else ClassMap.of_size(n_classes)
        fgrid = grid if n_frames is None else FrameGrid(label_hop=0.1, clip_duration=n_frames * 0.1)
        annotations = []
        for frame in range(fgrid.n_frames):
            for class_id in range(cmap.n_classes):
                if rng.random() >= density:
                    continue
                for source in range(int(rng.integers(1, max_per_cell + 1))):
                    annotations.append(
                        EventAnnotation(
                            frame=frame,
                            class_id=class_id,
                            source=source,
                            activity=activity,
                            doa=random_doa(rng),
                            distance=float(rng.uniform(0.3, 5.0)),
                        )
                    )
        return Clip(annotations=tuple(annotations), grid=fgrid, class_map=cmap)

    return _make


def angle_between(a, b) -> float:
    cos = float(np.clip(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))
    return math.degrees(math.acos(cos))
