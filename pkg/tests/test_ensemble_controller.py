import dataclasses

import numpy as np
import pytest

from common.data_controller import ChannelSeries, MultiChannelDataset, resample_zoh
from common.ensemble_controller import (
    BaseModel,
    ChannelModel,
    ChannelPrediction,
    HierarchicalModel,
    PredictionFrame,
    SegmentSettings,
    audit_leakage,
    check_structure,
    channel_predict,
    derive_seed,
    group_reduce,
    or_combine,
    predict,
    train_hierarchy,
)
from common.errors import LeakageError, StructureError
from common.feature_controller import BASE_FEATURE_NAMES
from common.learner_controller import ClassifierSpec, TrainedClassifier
from common.masking_controller import MaskingPlan


def constant(rate, dim):
    return TrainedClassifier(ClassifierSpec("logreg"), {"kind": "constant", "rate": rate}, dim)


def test_group_reduce_hand_example():
    p = {"c1": 0.9, "c2": 0.4, "c3": 0.7}
    w = {"c1": 0.8, "c2": 0.5, "c3": 1.0}
    assert group_reduce(p, ("c1", "c3"), w, 2.0) == pytest.approx(1.138, abs=1e-12)


def test_group_reduce_plain_sum_at_unit_power():
    p = {"a": 0.2, "b": 0.3}
    assert group_reduce(p, ("a", "b"), {"a": 1.0, "b": 1.0}, 1.0) == pytest.approx(0.5)


def test_group_reduce_matches_formula_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(100):
        C = int(rng.integers(1, 8))
        ids = [f"c{i}" for i in range(C)]
        p = dict(zip(ids, rng.random(C)))
        w = dict(zip(ids, rng.random(C)))
        gamma = float(rng.uniform(1.0, 4.0))
        G = [c for c in ids if rng.random() < 0.6]
        expected = sum(w[c] * p[c] ** gamma for c in G)
        assert group_reduce(p, G, w, gamma) == pytest.approx(expected, abs=1e-12)


def test_group_reduce_is_monotone():
    rng = np.random.default_rng(1)
    ids = ["a", "b", "c", "d"]
    for _ in range(1000):
        low = rng.random(4)
        high = np.minimum(1.0, low + rng.random(4) * (1 - low))
        w = dict(zip(ids, rng.random(4)))
        gamma = float(rng.uniform(1.0, 3.0))
        assert group_reduce(dict(zip(ids, low)), ids, w, gamma) <= group_reduce(dict(zip(ids, high)), ids, w, gamma)


def test_group_reduce_missing_member_rejected():
    with pytest.raises(StructureError):
        group_reduce({"a": 0.5}, ("a", "b"), {"a": 1.0, "b": 1.0}, 2.0)


def test_derive_seed_separates_coordinates():
    assert derive_seed(7, 1, 50, 0, 1, 1) == derive_seed(7, 1, 50, 0, 1, 1)
    assert derive_seed(7, 1, 50, 0, 1, 1) != derive_seed(7, 1, 50, 0, 1, 2)
    assert derive_seed(7, 1, 50, 0, 1, 1) != derive_seed(8, 1, 50, 0, 1, 1)


def _constant_model(make_config, stack_rates=(0.2, 0.6)):
    config = make_config(shapelet_lengths=())
    settings = SegmentSettings.from_config(config, 20, 5, False)
    pooled_dim = 2 * len(BASE_FEATURE_NAMES)
    base = {(n, m): BaseModel(n, m, constant(0.3, pooled_dim)) for n in (1, 2) for m in (1, 2)}
    stack = {n: constant(rate, 2) for n, rate in zip((1, 2), stack_rates)}
    channel = ChannelModel("c", None, base, stack, 1.0)
    return HierarchicalModel(settings, {"c": channel}, {"g": ("c",)}, {"c": constant(0.5, 1)})


def _series(length=400, step=30):
    rng = np.random.default_rng(4)
    return ChannelSeries("c", np.arange(length) * step, rng.normal(size=length), np.zeros(length))


def test_channel_predict_averages_stacking_outputs(make_config):
    prediction = channel_predict(_constant_model(make_config), _series())
    assert len(prediction.probabilities) > 0
    assert np.allclose(prediction.probabilities, 0.4)
    assert np.all(np.diff(prediction.spans[:, 0]) > 0)


def test_channel_predict_rejects_other_grid(make_config):
    with pytest.raises(StructureError, match="grid mismatch"):
        channel_predict(_constant_model(make_config), _series(step=60))


def test_channel_predict_rejects_unknown_channel(make_config):
    other = ChannelSeries("x", np.arange(50) * 30, np.zeros(50), np.zeros(50))
    with pytest.raises(StructureError, match="not part of the trained model"):
        channel_predict(_constant_model(make_config), other)


def _frame(decisions, probabilities, timestamps=None, provenance="f"):
    decisions = np.asarray(decisions, dtype=np.int8)
    timestamps = np.arange(len(decisions)) if timestamps is None else timestamps
    empty = np.zeros(0)
    pred = ChannelPrediction("c", np.zeros((0, 2), int), empty, empty, None, np.asarray(probabilities, float), decisions)
    return PredictionFrame(timestamps, {"c": pred}, provenance)


def test_or_combine_properties():
    rng = np.random.default_rng(6)
    frames = [_frame(rng.integers(0, 2, 30), rng.random(30), provenance=str(i)) for i in range(3)]
    combined = or_combine(frames)
    c = combined.channels["c"]
    expected = np.maximum.reduce([f.channels["c"].step_decisions for f in frames])
    assert np.array_equal(c.step_decisions, expected)
    assert np.array_equal(c.step_probabilities, np.maximum.reduce([f.channels["c"].step_probabilities for f in frames]))
    single = or_combine(frames[:1]).channels["c"]
    assert np.array_equal(single.step_decisions, frames[0].channels["c"].step_decisions)
    swapped = or_combine(frames[::-1]).channels["c"]
    assert np.array_equal(swapped.step_decisions, c.step_decisions)
    twice = or_combine([frames[0], frames[0]]).channels["c"]
    assert np.array_equal(twice.step_decisions, frames[0].channels["c"].step_decisions)
    assert combined.provenance == "or(0|1|2)"


def test_or_combine_rejects_mismatched_grids():
    with pytest.raises(StructureError):
        or_combine([_frame([0, 1], [0.1, 0.9]), _frame([0, 1, 0], [0.1, 0.9, 0.1])])
    with pytest.raises(StructureError):
        or_combine([])


def test_frame_events_follow_decisions():
    frame = _frame([0, 1, 1, 0, 1], [0, 0.9, 0.8, 0.1, 0.7], timestamps=np.arange(5) * 30)
    assert [(e.start, e.end, e.channel_id) for e in frame.events()] == [(30, 60, "c"), (120, 120, "c")]


def test_trained_hierarchy_has_every_model(trained_model, tiny_dataset):
    counts = trained_model.counts()
    assert counts == {"base_models": 3 * 2 * 2, "stack_models": 3 * 2, "cca_heads": 3}
    for cm in trained_model.channels.values():
        assert 0.0 <= cm.weight <= 1.0
        for bm in cm.base.values():
            assert bm.pool is not None and bm.pool.K == 2
            assert bm.classifier.feature_dim == 2 * (len(BASE_FEATURE_NAMES) + 4)
    assert trained_model.group_order == sorted(tiny_dataset.groups)


def test_trained_hierarchy_passes_leakage_audit(trained_model):
    assert audit_leakage(trained_model) == 12


def test_audit_catches_overlapping_plan(trained_model):
    cid, cm = next(iter(trained_model.channels.items()))
    plan = cm.plan
    broken = MaskingPlan(
        plan.series_len, plan.N, plan.M, plan.cca_span,
        ((0, plan.level1[0][1] + 5),) + plan.level1[1:], plan.level2, cid,
    )
    channels = dict(trained_model.channels)
    channels[cid] = dataclasses.replace(cm, plan=broken)
    with pytest.raises(LeakageError):
        audit_leakage(dataclasses.replace(trained_model, channels=channels))


def test_predict_covers_every_channel_and_timestep(trained_model, tiny_dataset):
    frame = predict(trained_model, tiny_dataset)
    assert frame.channel_ids == tiny_dataset.channel_ids
    length = len(tiny_dataset.timestamps)
    for pred in frame.channels.values():
        assert pred.step_decisions.shape == (length,)
        assert np.all((pred.step_probabilities >= 0) & (pred.step_probabilities <= 1))
        flagged = pred.probabilities >= trained_model.settings.theta
        assert np.array_equal(pred.decisions.astype(bool), flagged)
    for event in frame.events():
        assert event.start <= event.end


def test_threshold_override_is_monotone(trained_model, tiny_dataset):
    strict = predict(trained_model, tiny_dataset, theta=0.9)
    loose = predict(trained_model, tiny_dataset, theta=0.1)
    for cid in strict.channels:
        assert np.all(strict.channels[cid].step_decisions <= loose.channels[cid].step_decisions)


def test_predict_rejects_changed_structure(trained_model, tiny_dataset):
    fewer = MultiChannelDataset(
        tiny_dataset.channels[:2],
        {"group_0": tuple(tiny_dataset.channel_ids[:2])},
        (),
        tiny_dataset.grid_step,
    )
    with pytest.raises(StructureError, match="missing channel"):
        predict(trained_model, fewer)


def test_predict_rejects_other_grid(trained_model, tiny_dataset):
    coarse = MultiChannelDataset(
        [resample_zoh(s, 60) for s in tiny_dataset.channels], tiny_dataset.groups, (), 60
    )
    with pytest.raises(StructureError, match="grid mismatch"):
        predict(trained_model, coarse)


def test_training_is_deterministic(trained_model, tiny_dataset, make_config):
    again = train_hierarchy(tiny_dataset, make_config())
    a, b = predict(trained_model, tiny_dataset), predict(again, tiny_dataset)
    for cid in a.channels:
        assert np.array_equal(a.channels[cid].step_probabilities, b.channels[cid].step_probabilities)
    assert trained_model.weights == again.weights


@pytest.mark.slow
def test_worker_count_does_not_change_the_model(trained_model, tiny_dataset, make_config):
    parallel = train_hierarchy(tiny_dataset, make_config(workers=2))
    a, b = predict(trained_model, tiny_dataset), predict(parallel, tiny_dataset, workers=2)
    for cid in a.channels:
        assert np.array_equal(a.channels[cid].step_probabilities, b.channels[cid].step_probabilities)


def test_tree_cross_channel_heads(tree_cca_model, tiny_dataset):
    check_structure(tree_cca_model, tiny_dataset)
    assert tree_cca_model.counts()["cca_heads"] == 3
    for head in tree_cca_model.cca.values():
        assert head.spec.kind == "gbt"
        assert head.feature_dim == len(tiny_dataset.groups)
    frame = predict(tree_cca_model, tiny_dataset)
    assert frame.channel_ids == tiny_dataset.channel_ids
    for pred in frame.channels.values():
        assert np.all((pred.probabilities >= 0) & (pred.probabilities <= 1))
        assert np.array_equal(pred.decisions.astype(bool), pred.probabilities >= tree_cca_model.settings.theta)
    assert audit_leakage(tree_cca_model) == 12
