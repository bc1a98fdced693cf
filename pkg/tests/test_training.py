import numpy as np
import pandas as pd
import pytest
import torch

from app.core.exceptions import ShapeMismatchError, TrainingDivergedError
from app.schemas.audio import SpectralFeatures, StftConfig
from app.schemas.labels import ClassMap
from app.schemas.loss import LossConfig, LossValue
from app.schemas.metrics import MetricThresholds
from app.schemas.representation import DecodeConfig, FormatKind, ReprFormat
from app.schemas.scene import SceneSpec
from app.schemas.training import ModelConfig, TrainConfig
from app.services import training
from app.services.metrics import evaluate_many, seld_score
from app.services.model import SeldModel
from app.services.representations import combine_joint, decode, encode
from app.services.simulator import render_dataset
from app.services.training import build_dataset, three_stage_lr, train, write_history


def _train_config(kind, **overrides):
    values = dict(total_steps=20, batch_size=2, peak_lr=1e-3, loss=LossConfig.recommended(kind), log_every=5)
    values.update(overrides)
    return TrainConfig(**values)


def _tiny_model(kind, n_classes=3, n_mels=16):
    torch.manual_seed(0)
    config = ModelConfig(
        format=ReprFormat.for_kind(kind, n_classes),
        n_mels=n_mels,
        conv_channels=(4, 8),
        freq_pool=(2, 2),
        seq_hidden=8,
        head_hidden=8,
    )
    return SeldModel(config)


@pytest.fixture
def samples(make_clip):
    """Random features paired with SED-DOA targets on a 10-frame label grid."""
    rng = np.random.default_rng(0)
    fmt = ReprFormat.for_kind(FormatKind.SED_DOA, 3)
    return [
        (SpectralFeatures(data=rng.standard_normal((50, 7, 16))), encode(make_clip(rng), fmt))
        for _ in range(4)
    ]


def test_schedule_endpoints():
    cfg = _train_config(FormatKind.SED_DOA, total_steps=2000)
    assert three_stage_lr(0, cfg) == 0.0
    assert three_stage_lr(100, cfg) == pytest.approx(5e-4)
    assert three_stage_lr(200, cfg) == pytest.approx(1e-3)
    assert three_stage_lr(999, cfg) == pytest.approx(1e-3)
    assert three_stage_lr(1999, cfg) == pytest.approx(5e-5)
    rates = [three_stage_lr(s, cfg) for s in range(1000, 2000)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_step_multiplier():
    cfg = _train_config(
        FormatKind.SED_SDE,
        total_steps=360,
        step_multiplier=TrainConfig.format_step_multiplier(FormatKind.SED_SDE),
    )
    assert cfg.effective_steps == 100
    assert TrainConfig.format_step_multiplier(FormatKind.SED_DOA) == 1.0
    with pytest.raises(ValueError):
        _train_config(FormatKind.SED_DOA, warmup_frac=0.7, hold_frac=0.5)


def test_training_is_deterministic(samples):
    cfg = _train_config(FormatKind.SED_DOA)
    first = train(_tiny_model(FormatKind.SED_DOA), samples, cfg)
    second = train(_tiny_model(FormatKind.SED_DOA), samples, cfg)
    assert [r.total for r in first.history] == [r.total for r in second.history]
    assert len(first.history) == 20
    assert set(first.history[0].components) == {"sed", "doa"}


def test_training_rejects_mismatched_format(samples):
    with pytest.raises(ShapeMismatchError):
        train(_tiny_model(FormatKind.SED_SCE), samples, _train_config(FormatKind.SED_SCE))
    with pytest.raises(ShapeMismatchError):
        train(_tiny_model(FormatKind.SED_DOA), [], _train_config(FormatKind.SED_DOA))


def test_divergence_is_reported(samples, monkeypatch):
    nan = float("nan")
    monkeypatch.setattr(
        training,
        "joint_loss",
        lambda *args, **kwargs: LossValue(total=nan, components={"sed": nan}, weights={"sed": 1.0}),
    )
    with pytest.raises(TrainingDivergedError) as err:
        train(_tiny_model(FormatKind.SED_DOA), samples, _train_config(FormatKind.SED_DOA))
    assert err.value.step == 0


def test_history_file(tmp_path, samples):
    result = train(_tiny_model(FormatKind.SED_DOA), samples, _train_config(FormatKind.SED_DOA, total_steps=3))
    path = write_history(tmp_path / "history.csv", result)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["step", "lr", "total", "sed", "doa"]
    assert list(frame["step"]) == [0, 1, 2]


def test_build_dataset_with_augmentation(tmp_path):
    classes = ClassMap.of_size(2)
    render_dataset(SceneSpec(duration=1.0, n_events=1, classes=classes, event_length_range=(0.5, 0.5)), 2, tmp_path)
    fmt = ReprFormat.for_kind(FormatKind.SED_DOA, 2)
    plain = build_dataset(tmp_path, fmt, StftConfig(), classes)
    assert len(plain) == 2
    features, targets = plain[0]
    assert features.data.shape == (49, 7, 64)
    assert targets.n_frames == 10
    assert len(build_dataset(tmp_path, fmt, StftConfig(), classes, augment=True)) == 16


def test_distance_only_dataset_is_not_augmented(tmp_path):
    classes = ClassMap.of_size(2)
    render_dataset(SceneSpec(duration=1.0, n_events=1, classes=classes, event_length_range=(0.5, 0.5)), 2, tmp_path)
    fmt = ReprFormat.for_kind(FormatKind.SED_SDE, 2)
    assert len(build_dataset(tmp_path, fmt, StftConfig(), classes, augment=True)) == 2
    joint_fmt = ReprFormat.for_kind(FormatKind.SED_DOA_SDE, 2)
    assert len(build_dataset(tmp_path, joint_fmt, StftConfig(), classes, augment=True)) == 16


def _simulated(tmp_path, kind, n_clips=20):
    classes = ClassMap.of_size(2)
    spec = SceneSpec(duration=2.0, n_events=2, classes=classes, polyphony_max=1, event_length_range=(0.5, 1.0))
    render_dataset(spec, n_clips, tmp_path, master_seed=3)
    fmt = ReprFormat.for_kind(kind, 2)
    return build_dataset(tmp_path, fmt, StftConfig(), classes), fmt


def _simulation_model(fmt):
    torch.manual_seed(0)
    return SeldModel(
        ModelConfig(format=fmt, conv_channels=(8, 16, 16), seq_hidden=32, head_hidden=32, distance_init=2.0)
    )


def _overfit(tmp_path, kind):
    dataset, fmt = _simulated(tmp_path / kind.value, kind)
    model = _simulation_model(fmt)
    cfg = _train_config(kind, total_steps=1500, batch_size=8, peak_lr=3e-3, log_every=250)
    result = train(model, dataset, cfg)
    with torch.no_grad():
        outputs = [(model(features, targets.n_frames), targets) for features, targets in dataset]
    return result, outputs


def _decoded(outputs):
    return [(decode(targets, DecodeConfig()), decode(pred, DecodeConfig())) for pred, targets in outputs]


def _thresholds(fmt):
    return MetricThresholds(use_angular=fmt.estimates_doa, use_distance=fmt.estimates_distance)


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(FormatKind))
def test_overfits_twenty_clips(tmp_path, kind):
    result, outputs = _overfit(tmp_path, kind)
    assert result.final_loss <= 0.1 * result.initial_loss

    fmt = outputs[0][0].format
    report = evaluate_many(_decoded(outputs), _thresholds(fmt))
    assert report.f1 >= 0.8
    if fmt.estimates_doa:
        assert report.doae_deg <= 10.0
    if fmt.estimates_distance:
        assert report.rde <= 0.2


@pytest.mark.slow
def test_joint_combination_beats_single_models(tmp_path):
    _, doa_outputs = _overfit(tmp_path, FormatKind.SED_DOA)
    _, sde_outputs = _overfit(tmp_path, FormatKind.SED_SDE)

    doa_report = evaluate_many(_decoded(doa_outputs), MetricThresholds(use_distance=False))
    sde_report = evaluate_many(_decoded(sde_outputs), MetricThresholds(use_angular=False))
    # a single model scores the quantity it does not estimate at its worst value
    doa_only = seld_score(doa_report.f1, doa_report.doae_deg, 1.0)
    sde_only = seld_score(sde_report.f1, 180.0, sde_report.rde)

    # both target tensors come from the same labels, so their combination is the full ground truth
    joint = [
        (combine_joint(doa_gt, sde_gt, DecodeConfig()), combine_joint(doa_pred, sde_pred, DecodeConfig()))
        for (doa_pred, doa_gt), (sde_pred, sde_gt) in zip(doa_outputs, sde_outputs)
    ]
    joint_report = evaluate_many(joint, MetricThresholds())
    assert joint_report.seld_score <= min(doa_only, sde_only)
