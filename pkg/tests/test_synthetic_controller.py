import numpy as np
import pytest

from common.data_controller import labels_to_events
from common.errors import DataError
from common.synthetic_controller import SynthConfig, generate_synthetic, group_assignment, realized_density

SMALL = SynthConfig(channels=4, groups=2, length=6000, density=0.02)


def test_generation_is_deterministic():
    first = generate_synthetic(SMALL, seed=7)
    second = generate_synthetic(SMALL, seed=7)
    for a, b in zip(first.channels, second.channels):
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.labels, b.labels)
    assert first.events == second.events


def test_different_seeds_differ():
    a = generate_synthetic(SMALL, seed=1)
    b = generate_synthetic(SMALL, seed=2)
    assert not np.array_equal(a.channels[0].values, b.channels[0].values)


def test_realized_density_within_half_a_point():
    dataset = generate_synthetic(SynthConfig(), seed=7)
    assert 0.013 <= realized_density(dataset) <= 0.023


def test_recorded_events_equal_label_runs():
    dataset = generate_synthetic(SMALL, seed=5)
    for series in dataset.channels:
        derived = labels_to_events(series.labels, series.timestamps, series.channel_id)
        recorded = [e for e in dataset.events if e.channel_id == series.channel_id]
        assert derived == recorded


def test_some_events_span_several_channels_of_one_group():
    dataset = generate_synthetic(SMALL, seed=3)
    by_interval = {}
    for event in dataset.events:
        by_interval.setdefault((event.start, event.end), set()).add(event.channel_id)
    shared = [channels for channels in by_interval.values() if len(channels) > 1]
    assert shared
    for channels in shared:
        assert len({dataset.group_of(c) for c in channels}) == 1


def test_groups_follow_channel_index():
    assert group_assignment(5, 2) == [0, 0, 0, 1, 1]
    dataset = generate_synthetic(SynthConfig(channels=5, groups=2, length=3000), seed=1)
    assert dataset.groups == {
        "group_0": ("channel_0", "channel_1", "channel_2"),
        "group_1": ("channel_3", "channel_4"),
    }
    assert dataset.grid_step == 30


def test_density_above_regime_rejected():
    with pytest.raises(DataError, match="density"):
        SynthConfig(density=0.25)


def test_unknown_archetype_rejected():
    with pytest.raises(DataError, match="archetype"):
        SynthConfig(archetypes=("spike", "meteor"))


def test_zero_density_has_no_events():
    dataset = generate_synthetic(SynthConfig(channels=2, groups=1, length=2000, density=0.0), seed=4)
    assert dataset.events == ()
    assert realized_density(dataset) == 0.0


@pytest.mark.parametrize("gap", [0, -3])
def test_non_positive_gap_rejected(gap):
    with pytest.raises(DataError, match="min_gap"):
        SynthConfig(min_gap=gap)
