import numpy as np
import pytest

from app.core.exceptions import FormatMismatchError, PolyphonyError, ShapeMismatchError
from app.schemas.labels import Clip, EventAnnotation, FrameGrid
from app.schemas.representation import DecodeConfig, FormatKind, ReprFormat, TargetTensor
from app.services.representations import combine_joint, decode, encode, load_targets, save_targets

ALL_KINDS = list(FormatKind)


def _single(classes, grid, doa=(1.0, 0.0, 0.0), distance=2.5, frame=2, class_id=1):
    ann = EventAnnotation(frame=frame, class_id=class_id, doa=doa, distance=distance)
    return Clip(annotations=(ann,), grid=grid, class_map=classes)


def _key(a):
    return (a.frame, a.class_id, a.source)


def _assert_same_events(expected, actual, fmt):
    assert len(actual) == len(expected)
    for a, b in zip(sorted(expected.annotations, key=_key), sorted(actual.annotations, key=_key)):
        assert _key(a) == _key(b)
        assert b.activity == pytest.approx(a.activity, abs=1e-12)
        if fmt.estimates_doa:
            np.testing.assert_allclose(b.doa, a.doa, atol=1e-6)
        if fmt.estimates_distance:
            assert b.distance == pytest.approx(a.distance, abs=1e-6)


@pytest.mark.parametrize(
    "kind,dims",
    [
        (FormatKind.MULTI_ACCDOA, (36,)),
        (FormatKind.SED_DOA, (3, 9)),
        (FormatKind.SED_SDE, (3, 3)),
        (FormatKind.SED_SCE, (3, 9)),
        (FormatKind.SED_DOA_SDE, (3, 9, 3)),
    ],
)
def test_branch_layout(kind, dims):
    fmt = ReprFormat.for_kind(kind, 3)
    assert fmt.dims == dims


def test_layout_mismatch_rejected():
    with pytest.raises(FormatMismatchError):
        ReprFormat(kind=FormatKind.SED_DOA, n_classes=3, branch_names=("sed",), dims=(3,), activations=("sigmoid",))


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_inactive_cells_are_zero(kind, classes, grid):
    fmt = ReprFormat.for_kind(kind, 3)
    tensor = encode(_single(classes, grid), fmt)
    for branch in tensor.branches:
        assert branch.shape[0] == grid.n_frames
        mask = np.ones(branch.shape, dtype=bool)
        mask[2] = False
        assert not np.any(branch[mask])


def test_sce_entry_is_scaled_direction(classes, grid):
    fmt = ReprFormat.for_kind(FormatKind.SED_SCE, 3)
    sce = encode(_single(classes, grid), fmt).branch("sce")
    np.testing.assert_allclose(sce[2, [1, 4, 7]], (2.5, 0.0, 0.0))


def test_accdoa_track_entry(classes, grid):
    fmt = ReprFormat.for_kind(FormatKind.MULTI_ACCDOA, 3)
    branch = encode(_single(classes, grid, doa=(0.6, 0.8, 0.0), distance=5.0), fmt).branches[0]
    C = 3
    entry = [branch[2, axis * C + 1] for axis in range(4)]
    np.testing.assert_allclose(entry, (0.6, 0.8, 0.0, 5.0))
    assert not np.any(branch[2, 4 * C :])


def test_sce_decode_pythagorean(classes, grid):
    fmt = ReprFormat.for_kind(FormatKind.SED_SCE, 3)
    sed = np.zeros((grid.n_frames, 3))
    sce = np.zeros((grid.n_frames, 9))
    sed[0, 0] = 0.9
    sce[0, [0, 3, 6]] = (3.0, 4.0, 0.0)
    clip = decode(TargetTensor(branches=(sed, sce), format=fmt), DecodeConfig(), grid, classes)
    (ann,) = clip.annotations
    np.testing.assert_allclose(ann.doa, (0.6, 0.8, 0.0), atol=1e-12)
    assert ann.distance == pytest.approx(5.0)
    assert ann.activity == pytest.approx(0.9)


def test_below_threshold_is_inactive(classes, grid):
    fmt = ReprFormat.for_kind(FormatKind.SED_DOA, 3)
    sed = np.zeros((grid.n_frames, 3))
    doa = np.zeros((grid.n_frames, 9))
    sed[4, 2] = 0.4
    doa[4, [2, 5, 8]] = (1.0, 0.0, 0.0)
    assert len(decode(TargetTensor(branches=(sed, doa), format=fmt), DecodeConfig(sed_threshold=0.5))) == 0


def test_zero_direction_is_dropped(classes, grid):
    fmt = ReprFormat.for_kind(FormatKind.SED_DOA, 3)
    sed = np.full((grid.n_frames, 3), 0.9)
    doa = np.zeros((grid.n_frames, 9))
    assert len(decode(TargetTensor(branches=(sed, doa), format=fmt), DecodeConfig())) == 0


def _check_round_trips(kind, make_clip, n_clips, seed):
    fmt = ReprFormat.for_kind(kind, 3)
    rng = np.random.default_rng(seed)
    for _ in range(n_clips):
        clip = make_clip(rng, max_per_cell=fmt.max_polyphony, density=float(rng.uniform(0.1, 0.7)))
        back = decode(encode(clip, fmt), DecodeConfig(), clip.grid, clip.class_map)
        _assert_same_events(clip, back, fmt)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_round_trip_every_format(kind, make_clip):
    _check_round_trips(kind, make_clip, 20, seed=11)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ALL_KINDS)
def test_round_trip_many_clips(kind, make_clip):
    _check_round_trips(kind, make_clip, 1000, seed=12)


def test_accdoa_three_tracks(classes, grid):
    doas = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0)]
    anns = tuple(
        EventAnnotation(frame=5, class_id=0, source=s, doa=doa, distance=1.0 + s) for s, doa in enumerate(doas)
    )
    clip = Clip(annotations=anns, grid=grid, class_map=classes)
    fmt = ReprFormat.for_kind(FormatKind.MULTI_ACCDOA, 3)
    back = decode(encode(clip, fmt), DecodeConfig(), grid, classes)
    _assert_same_events(clip, back, fmt)


def test_polyphony_error_names_cell(classes, grid):
    anns = tuple(
        EventAnnotation(frame=7, class_id=2, source=s, doa=(1.0, 0.0, 0.0), distance=1.0) for s in range(2)
    )
    clip = Clip(annotations=anns, grid=grid, class_map=classes)
    with pytest.raises(PolyphonyError) as err:
        encode(clip, ReprFormat.for_kind(FormatKind.SED_DOA, 3))
    assert (err.value.frame, err.value.class_id) == (7, 2)


def test_encode_class_count_mismatch(make_clip):
    clip = make_clip(np.random.default_rng(0))
    with pytest.raises(FormatMismatchError):
        encode(clip, ReprFormat.for_kind(FormatKind.SED_DOA, 4))


def test_decode_grid_mismatch(classes):
    fmt = ReprFormat.for_kind(FormatKind.SED_SDE, 3)
    tensor = TargetTensor(branches=(np.zeros((5, 3)), np.zeros((5, 3))), format=fmt)
    with pytest.raises(ShapeMismatchError):
        decode(tensor, DecodeConfig(), FrameGrid(label_hop=0.1, clip_duration=1.0), classes)


def test_target_tensor_checks_widths():
    fmt = ReprFormat.for_kind(FormatKind.SED_DOA, 3)
    with pytest.raises(ShapeMismatchError):
        TargetTensor(branches=(np.zeros((5, 3)), np.zeros((5, 6))), format=fmt)


def _joint_inputs(grid, sed_a, sed_b):
    T = grid.n_frames
    doa_fmt = ReprFormat.for_kind(FormatKind.SED_DOA, 3)
    sde_fmt = ReprFormat.for_kind(FormatKind.SED_SDE, 3)
    sed1 = np.zeros((T, 3))
    sed2 = np.zeros((T, 3))
    doa = np.zeros((T, 9))
    sde = np.zeros((T, 3))
    sed1[0, 0], sed2[0, 0] = sed_a, sed_b
    doa[0, [0, 3, 6]] = (0.0, 0.0, 0.5)
    sde[0, 0] = 3.0
    return (
        TargetTensor(branches=(sed1, doa), format=doa_fmt),
        TargetTensor(branches=(sed2, sde), format=sde_fmt),
    )


def test_combine_joint_mean_activity(grid):
    doa_pred, sde_pred = _joint_inputs(grid, 0.6, 0.8)
    (ann,) = combine_joint(doa_pred, sde_pred, DecodeConfig()).annotations
    assert ann.activity == pytest.approx(0.7)
    np.testing.assert_allclose(ann.doa, (0.0, 0.0, 1.0))
    assert ann.distance == 3.0


def test_combine_joint_inactive(grid):
    doa_pred, sde_pred = _joint_inputs(grid, 0.9, 0.0)
    assert len(combine_joint(doa_pred, sde_pred, DecodeConfig())) == 0


def test_combine_joint_matches_single_decodes(make_clip):
    clip = make_clip(np.random.default_rng(5), density=0.5)
    doa_pred = encode(clip, ReprFormat.for_kind(FormatKind.SED_DOA, 3))
    sde_pred = encode(clip, ReprFormat.for_kind(FormatKind.SED_SDE, 3))
    joint = combine_joint(doa_pred, sde_pred, DecodeConfig(), clip.grid, clip.class_map)
    from_doa = decode(doa_pred, DecodeConfig(), clip.grid, clip.class_map)
    from_sde = decode(sde_pred, DecodeConfig(), clip.grid, clip.class_map)
    assert [_key(a) for a in joint.annotations] == [_key(a) for a in from_doa.annotations]
    for j, a, b in zip(joint.annotations, from_doa.annotations, from_sde.annotations):
        assert j.doa == a.doa
        assert j.distance == b.distance


def test_combine_joint_rejects_wrong_formats(grid):
    doa_pred, sde_pred = _joint_inputs(grid, 0.6, 0.8)
    with pytest.raises(FormatMismatchError):
        combine_joint(sde_pred, doa_pred, DecodeConfig())


def test_targets_file(tmp_path, make_clip):
    clip = make_clip(np.random.default_rng(2))
    tensor = encode(clip, ReprFormat.for_kind(FormatKind.SED_DOA_SDE, 3))
    path = save_targets(tmp_path / "clip.npz", tensor)
    loaded = load_targets(path)
    assert loaded.format == tensor.format
    for a, b in zip(loaded.branches, tensor.branches):
        np.testing.assert_array_equal(a, b)
