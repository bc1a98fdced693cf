import itertools

import numpy as np
import pytest

from conftest import random_doa

from app.core.exceptions import ShapeMismatchError
from app.schemas.labels import ClassMap, Clip, EventAnnotation, FrameGrid
from app.schemas.metrics import ClassCounts, MatchedPair, MetricThresholds
from app.services.labels import spherical_to_unit
from app.services.metrics import (
    angular_error_deg,
    doae,
    evaluate,
    evaluate_many,
    f1,
    match_and_count,
    rde,
    reference_scores,
    sed_sde_score,
    seld_score,
)


def _ann(frame, class_id, doa, distance, source=0):
    return EventAnnotation(frame=frame, class_id=class_id, source=source, doa=doa, distance=distance)


def _clip(anns, grid, classes):
    return Clip(annotations=tuple(anns), grid=grid, class_map=classes)


def _pair(angle=None, rel=None):
    return MatchedPair(frame=0, class_id=0, angular_error_deg=angle, relative_distance_error=rel, within_threshold=True)


def _brute_force(gt, pred, thr):
    """Exhaustive assignment per cell: (tp, fp, fn) plus the matched (angle, relative error) pairs."""
    tp = fp = fn = 0
    matched = []
    gt_cells, pred_cells = gt.by_cell(), pred.by_cell()
    for cell in set(gt_cells) | set(pred_cells):
        gts = gt_cells.get(cell, [])
        preds = pred_cells.get(cell, [])
        k = min(len(gts), len(preds))
        best, best_cost = [], float("inf")
        for chosen in itertools.permutations(range(len(preds)), k):
            for rows in itertools.combinations(range(len(gts)), k):
                pairs = list(zip(rows, chosen))
                cost = sum(angular_error_deg(gts[i].doa, preds[j].doa) for i, j in pairs)
                if cost < best_cost - 1e-12:
                    best, best_cost = pairs, cost
        for i, j in best:
            g, p = gts[i], preds[j]
            angle = angular_error_deg(g.doa, p.doa)
            rel = abs(p.distance - g.distance) / g.distance
            matched.append((angle, rel))
            if angle <= thr.angular_deg and rel <= thr.relative_distance:
                tp += 1
            else:
                fp += 1
                fn += 1
        fp += len(preds) - k
        fn += len(gts) - k
    return tp, fp, fn, matched


def _oracle_scores(gt, pred, thr):
    tp, fp, fn, matched = _brute_force(gt, pred, thr)
    denominator = 2 * tp + fp + fn
    f1_value = 1.0 if denominator == 0 else 2 * tp / denominator
    n_events = len(gt) + len(pred)
    if matched:
        doae_value = sum(a for a, _ in matched) / len(matched)
        rde_value = sum(r for _, r in matched) / len(matched)
    else:
        doae_value = 180.0 if n_events else 0.0
        rde_value = 1.0 if n_events else 0.0
    return (tp, fp, fn), f1_value, doae_value, rde_value


def test_identical_clips(make_clip, rng):
    clip = make_clip(rng, max_per_cell=2, density=0.5)
    counts = match_and_count(clip, clip, MetricThresholds())
    assert (counts.tp, counts.fp, counts.fn) == (len(clip), 0, 0)
    result = evaluate(clip, clip, MetricThresholds())
    assert result.f1 == 1.0
    assert result.doae_deg == pytest.approx(0.0, abs=1e-4)
    assert result.rde == 0.0
    assert result.seld_score == pytest.approx(0.0, abs=1e-4)


def test_angular_threshold_failure_still_counts_error(classes, grid):
    gt = _clip([_ann(3, 1, (1.0, 0.0, 0.0), 2.0)], grid, classes)
    pred = _clip([_ann(3, 1, spherical_to_unit(25.0, 0.0), 2.0)], grid, classes)
    counts = match_and_count(gt, pred, MetricThresholds())
    assert (counts.tp, counts.fp, counts.fn) == (0, 1, 1)
    assert evaluate(gt, pred, MetricThresholds()).doae_deg == pytest.approx(25.0)


def test_distance_threshold(classes, grid):
    gt = _clip([_ann(0, 0, (1.0, 0.0, 0.0), 2.0)], grid, classes)
    pred = _clip([_ann(0, 0, (1.0, 0.0, 0.0), 4.5)], grid, classes)
    assert match_and_count(gt, pred, MetricThresholds()).tp == 0
    assert match_and_count(gt, pred, MetricThresholds(use_distance=False)).tp == 1
    assert evaluate(gt, pred, MetricThresholds()).rde == pytest.approx(1.25)


def test_angular_flag_disabled(classes, grid):
    gt = _clip([_ann(0, 0, (1.0, 0.0, 0.0), 2.0)], grid, classes)
    pred = _clip([_ann(0, 0, (-1.0, 0.0, 0.0), 2.0)], grid, classes)
    assert match_and_count(gt, pred, MetricThresholds(use_angular=False)).tp == 1


def test_distance_free_predictions(classes, grid):
    gt = _clip([_ann(0, 0, (1.0, 0.0, 0.0), 2.0)], grid, classes)
    pred = _clip([EventAnnotation(frame=0, class_id=0, doa=(1.0, 0.0, 0.0))], grid, classes)
    with pytest.raises(ShapeMismatchError):
        match_and_count(gt, pred, MetricThresholds())
    report = evaluate(gt, pred, MetricThresholds(use_distance=False))
    assert report.f1 == 1.0
    assert report.rde is None and report.seld_score is None


def test_unmatched_events(classes, grid):
    gt = _clip([_ann(0, 0, (1.0, 0.0, 0.0), 2.0)], grid, classes)
    pred = _clip([_ann(1, 0, (1.0, 0.0, 0.0), 2.0), _ann(0, 1, (1.0, 0.0, 0.0), 2.0)], grid, classes)
    counts = match_and_count(gt, pred, MetricThresholds())
    assert (counts.tp, counts.fp, counts.fn) == (0, 2, 1)
    report = evaluate(gt, pred, MetricThresholds())
    assert report.doae_deg == 180.0 and report.rde == 1.0


def test_empty_clips(classes, grid):
    empty = _clip([], grid, classes)
    report = evaluate(empty, empty, MetricThresholds())
    assert report.f1 == 1.0
    assert report.doae_deg == 0.0 and report.rde == 0.0
    assert report.seld_score == 0.0


def test_grid_mismatch(classes, grid):
    other = FrameGrid(label_hop=0.1, clip_duration=2.0)
    with pytest.raises(ShapeMismatchError):
        match_and_count(_clip([], grid, classes), _clip([], other, classes), MetricThresholds())
    with pytest.raises(ShapeMismatchError):
        match_and_count(_clip([], grid, classes), _clip([], grid, ClassMap.of_size(4)), MetricThresholds())


def _random_scene_pair(rng):
    n_classes = int(rng.integers(1, 4))
    n_frames = int(rng.integers(1, 11))
    grid = FrameGrid(label_hop=0.1, clip_duration=n_frames * 0.1)
    classes = ClassMap.of_size(n_classes)

    gt = []
    for frame in range(n_frames):
        for class_id in range(n_classes):
            for source in range(int(rng.integers(0, 3))):
                gt.append(_ann(frame, class_id, random_doa(rng), float(rng.uniform(0.5, 4.0)), source))

    # dropped, perturbed and spurious predictions exercise every count
    pred = []
    for a in gt:
        if rng.random() < 0.8:
            direction = np.asarray(a.doa) + rng.normal(0.0, 0.3, 3)
            direction /= np.linalg.norm(direction)
            pred.append(_ann(a.frame, a.class_id, tuple(direction), a.distance * float(rng.uniform(0.5, 2.5)), a.source))
    for frame in range(n_frames):
        for class_id in range(n_classes):
            if rng.random() < 0.25:
                pred.append(_ann(frame, class_id, random_doa(rng), float(rng.uniform(0.5, 4.0)), 2))
    return _clip(gt, grid, classes), _clip(pred, grid, classes)


def _check_against_brute_force(n_scenes, seed):
    rng = np.random.default_rng(seed)
    thr = MetricThresholds()
    for _ in range(n_scenes):
        gt, pred = _random_scene_pair(rng)
        counts, f1_value, doae_value, rde_value = _oracle_scores(gt, pred, thr)
        result = evaluate(gt, pred, thr)
        assert (result.tp, result.fp, result.fn) == counts
        assert result.f1 == pytest.approx(f1_value, abs=1e-9)
        assert result.doae_deg == pytest.approx(doae_value, abs=1e-9)
        assert result.rde == pytest.approx(rde_value, abs=1e-9)


def test_matches_brute_force_oracle():
    _check_against_brute_force(60, seed=21)


@pytest.mark.slow
def test_matches_brute_force_oracle_full():
    _check_against_brute_force(500, seed=22)


def test_f1_examples():
    assert f1(ClassCounts(tp=5)) == 1.0
    assert f1(ClassCounts(fp=1, fn=1)) == 0.0
    assert f1(ClassCounts(tp=3, fp=2, fn=1)) == pytest.approx(6 / 9)
    assert f1(ClassCounts()) == 1.0


def test_f1_invariant_under_class_relabeling(make_clip):
    rng = np.random.default_rng(8)
    gt = make_clip(rng, density=0.5)
    pred = make_clip(rng, density=0.5)
    perm = [2, 0, 1]

    def relabel(clip):
        return clip.with_annotations(
            [a.model_copy(update={"class_id": perm[a.class_id]}) for a in clip.annotations]
        )

    thr = MetricThresholds()
    assert evaluate(relabel(gt), relabel(pred), thr).f1 == pytest.approx(evaluate(gt, pred, thr).f1)


def test_doae_and_rde(rng):
    assert doae([_pair(angle=0.0)]) == 0.0
    assert angular_error_deg((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)) == pytest.approx(90.0)
    angles = rng.uniform(0.0, 180.0, 10)
    assert doae([_pair(angle=a) for a in angles]) == pytest.approx(float(np.mean(angles)), abs=1e-6)
    assert rde([_pair(rel=0.0)]) == 0.0
    assert rde([_pair(rel=0.5)]) == 0.5
    assert doae([], n_events=3) == 180.0 and doae([], n_events=0) == 0.0


def test_composite_scores():
    assert seld_score(0.44, 16.7, 0.32) == pytest.approx(0.324, abs=5e-4)
    assert seld_score(0.53, 14.6, 0.23) == pytest.approx(0.260, abs=5e-4)
    assert seld_score(1.0, 0.0, 0.0) == 0.0
    assert sed_sde_score(0.62, 0.26) == pytest.approx(0.320, abs=5e-4)
    assert sed_sde_score(0.57, 0.23) == pytest.approx(0.330, abs=5e-4)
    assert sed_sde_score(1.0, 0.0) == 0.0


def test_reference_rows_recompute():
    rows = reference_scores()
    assert len(rows) == 19
    for row in rows:
        assert row["computed"] == pytest.approx(row["reported"], abs=5e-4), row["system"]


def test_evaluate_many_accumulates(make_clip):
    rng = np.random.default_rng(3)
    thr = MetricThresholds()
    clips = [(make_clip(rng), make_clip(rng)) for _ in range(3)]
    total = evaluate_many(clips, thr)
    assert total.tp == sum(match_and_count(g, p, thr).tp for g, p in clips)
    assert total.fp == sum(match_and_count(g, p, thr).fp for g, p in clips)
    assert set(total.class_wise) <= {0, 1, 2}
