import numpy as np
import pytest

from common.data_controller import ChannelSeries
from common.errors import FeatureError
from common.feature_controller import (
    BASE_FEATURE_NAMES,
    FeatureMatrix,
    base_feature_matrix,
    base_features,
    contiguous_runs,
    rolling_minmax_pool,
    segment_windows,
    segmentize,
    window_feature_matrix,
)

IDX = {name: i for i, name in enumerate(BASE_FEATURE_NAMES)}


def oracle_features(x):
    """Direct evaluation of the moment, DFT and regression formulas."""
    x = np.asarray(x, dtype=np.float64)
    T = len(x)
    mu = x.sum() / T
    var = ((x - mu) ** 2).sum() / T
    sd = np.sqrt(var)
    skew = (((x - mu) ** 3).sum() / T) / sd**3
    kurt = (((x - mu) ** 4).sum() / T) / var**2 - 3.0
    t = np.arange(T)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * t / T)
    k = np.arange(1, T // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, t) / T)
    energy = (np.abs(basis @ (x * hann)) ** 2).sum()
    magnitude = np.abs(basis @ x)
    centroid = (magnitude * k / T).sum() / magnitude.sum()
    tc = t - t.mean()
    slope = (tc * (x - mu)).sum() / (tc**2).sum()
    d = np.diff(x)
    diff_var = ((d - d.sum() / len(d)) ** 2).sum() / len(d)
    return [mu, var, sd, skew, kurt, energy, centroid, slope, diff_var]


def test_base_features_match_direct_formulas_on_random_segments():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        T = int(rng.integers(8, 513))
        x = rng.normal(size=T) * rng.uniform(0.1, 5.0) + rng.uniform(-5.0, 5.0)
        got = base_features(x)
        want = oracle_features(x)
        for name, i in IDX.items():
            rel = 1e-6 if name in ("stft_energy", "spectral_centroid") else 1e-9
            assert got[i] == pytest.approx(want[i], rel=rel, abs=1e-10), name


def test_linear_series():
    f = base_features(np.array([2.0, 4.0, 6.0]))
    assert f[IDX["mean"]] == pytest.approx(4.0)
    assert f[IDX["slope"]] == pytest.approx(2.0)
    assert f[IDX["diff_var"]] == pytest.approx(0.0, abs=1e-15)


def test_small_moment_example():
    f = base_features(np.array([1.0, 2.0, 3.0]))
    assert f[IDX["var"]] == pytest.approx(2.0 / 3.0)
    assert f[IDX["skew"]] == pytest.approx(0.0, abs=1e-12)
    assert f[IDX["kurt"]] == pytest.approx(-1.5)


def test_constant_segment_degenerate_convention():
    f = base_features(np.array([5.0, 5.0, 5.0, 5.0]))
    for name in ("var", "std", "skew", "kurt"):
        assert f[IDX[name]] == 0.0


def test_pure_tone_centroid_sits_on_its_bin():
    T, k = 64, 5
    t = np.arange(T)
    f = base_features(np.cos(2 * np.pi * k * t / T))
    assert f[IDX["spectral_centroid"]] == pytest.approx(k / T, rel=1e-9)


def test_affine_invariance_of_shape_moments():
    rng = np.random.default_rng(5)
    x = rng.normal(size=100)
    a, b = 3.7, -12.0
    f, g = base_features(x), base_features(a * x + b)
    assert g[IDX["skew"]] == pytest.approx(f[IDX["skew"]], abs=1e-6)
    assert g[IDX["kurt"]] == pytest.approx(f[IDX["kurt"]], abs=1e-6)
    assert g[IDX["slope"]] == pytest.approx(a * f[IDX["slope"]], rel=1e-9)
    shifted = base_features(x + b)
    assert shifted[IDX["slope"]] == pytest.approx(f[IDX["slope"]], rel=1e-9)


def test_energy_non_negative_and_centroid_below_nyquist():
    rng = np.random.default_rng(9)
    rows = base_feature_matrix(rng.normal(size=(200, 50)))
    assert np.all(rows[:, IDX["stft_energy"]] >= 0)
    assert np.all((rows[:, IDX["spectral_centroid"]] >= 0) & (rows[:, IDX["spectral_centroid"]] <= 0.5))


def test_non_finite_input_rejected():
    with pytest.raises(FeatureError, match="non-finite"):
        base_features(np.array([1.0, np.inf, 2.0]))


def test_segment_count_on_contiguous_run():
    series = ChannelSeries("x", np.arange(10), np.arange(10.0), np.zeros(10))
    segments = segmentize(series, np.arange(10), 4, 2)
    assert [s.start_idx for s in segments] == [0, 2, 4, 6]
    assert all(s.end_idx - s.start_idx == 4 for s in segments)


def test_too_short_run_has_no_windows():
    series = ChannelSeries("x", np.arange(3), np.arange(3.0), np.zeros(3))
    assert segmentize(series, np.arange(3), 4, 1) == []


def test_windows_never_cross_a_hole():
    values = np.arange(20.0)
    index = np.concatenate([np.arange(0, 10), np.arange(12, 20)])
    batch = segment_windows(values, np.zeros(20), index, 4, 1)
    for start in batch.starts:
        covered = set(range(start, start + 4))
        assert covered <= set(index.tolist())
    assert contiguous_runs(index) == [(0, 10), (12, 20)]
    assert sorted(set(batch.runs.tolist())) == [0, 1]


def test_segment_label_is_or_of_timesteps():
    labels = np.zeros(12, dtype=np.int8)
    labels[5] = 1
    batch = segment_windows(np.arange(12.0), labels, np.arange(12), 4, 2)
    # windows start at 0, 2, 4, 6, 8; only [2, 6) and [4, 8) cover position 5
    assert batch.labels.tolist() == [0, 1, 1, 0, 0]


def _matrix(values, labels=None):
    rows = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
    spans = np.array([[2 * i, 2 * i + 4] for i in range(len(rows))])
    labels = np.zeros(len(rows)) if labels is None else labels
    return FeatureMatrix(rows, spans, labels, tuple(f"f{j}" for j in range(rows.shape[1])))


def test_pool_single_window():
    pooled = rolling_minmax_pool(_matrix([[1.0], [5.0], [3.0]], [0, 1, 0]), 3, 3)
    assert pooled.rows.tolist() == [[1.0, 5.0]]
    assert pooled.labels.tolist() == [1]
    assert pooled.spans.tolist() == [[0, 8]]
    assert pooled.feature_names == ("f0_min", "f0_max")


def test_pool_identity_window():
    pooled = rolling_minmax_pool(_matrix([[1.0], [2.0], [3.0]]), 1, 1)
    assert pooled.rows.tolist() == [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]


def test_pool_keeps_trailing_partial_window():
    pooled = rolling_minmax_pool(_matrix([[1.0], [2.0], [3.0], [4.0], [5.0]]), 2, 2)
    assert pooled.rows.tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 5.0]]
    assert pooled.spans.tolist() == [[0, 6], [4, 10], [8, 12]]


def test_pool_min_below_max_and_or_labels():
    rng = np.random.default_rng(1)
    labels = (rng.random(40) < 0.2).astype(int)
    fm = _matrix(rng.normal(size=(40, 3)), labels)
    pooled = rolling_minmax_pool(fm, 4, 2)
    d = 3
    assert np.all(pooled.rows[:, :d] <= pooled.rows[:, d:])
    for row, (start, _) in enumerate(pooled.spans):
        first = start // 2
        assert pooled.labels[row] == labels[first:first + 4].max()


def test_pool_restarts_at_each_run():
    batch = segment_windows(np.arange(30.0), np.zeros(30), np.r_[0:12, 15:30], 4, 2)
    fm = window_feature_matrix(batch)
    pooled = rolling_minmax_pool(fm, 2, 2)
    for start, end in pooled.spans:
        assert end <= 12 or start >= 15


def test_pool_rejects_empty_matrix():
    with pytest.raises(FeatureError):
        rolling_minmax_pool(FeatureMatrix(np.zeros((0, 1)), np.zeros((0, 2)), np.zeros(0), ("f0",)), 2, 2)
