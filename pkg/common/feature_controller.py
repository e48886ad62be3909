from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, signal, stats

from common.errors import FeatureError

# --- Configuration ---
BASE_FEATURE_NAMES = (
    "mean",
    "var",
    "std",
    "skew",
    "kurt",
    "stft_energy",
    "spectral_centroid",
    "slope",
    "diff_var",
)
DEGENERATE_STD = 1e-12


@dataclass(frozen=True, eq=False)
class Segment:
    start_idx: int
    end_idx: int
    values: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class SegmentBatch:
    """Windows of one index set: start positions, an (R, T) value matrix, OR labels and run ids."""

    starts: np.ndarray
    windows: np.ndarray
    labels: np.ndarray
    runs: np.ndarray
    seg_len: int

    def __len__(self):
        return len(self.starts)

    @property
    def spans(self):
        return np.column_stack([self.starts, self.starts + self.seg_len]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray
    spans: np.ndarray
    labels: np.ndarray
    feature_names: tuple
    runs: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            rows = rows.reshape(len(rows), -1)
        spans = np.asarray(self.spans, dtype=np.int64).reshape(-1, 2)
        labels = np.asarray(self.labels, dtype=np.int8)
        runs = np.zeros(len(rows), dtype=np.int64) if self.runs is None else np.asarray(self.runs, dtype=np.int64)
        if not (len(rows) == len(spans) == len(labels) == len(runs)):
            raise FeatureError("feature rows, spans, labels and runs differ in length")
        if rows.shape[1] != len(self.feature_names):
            raise FeatureError(
                f"feature dimension {rows.shape[1]} does not match {len(self.feature_names)} names"
            )
        if len(spans) > 1 and np.any(np.diff(spans[:, 0]) < 0):
            raise FeatureError("feature rows must be ordered by span start")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "spans", spans)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return len(self.rows)

    def to_frame(self):
        frame = pd.DataFrame(self.rows, columns=list(self.feature_names))
        frame.insert(0, "label", self.labels)
        frame.insert(0, "span_end", self.spans[:, 1])
        frame.insert(0, "span_start", self.spans[:, 0])
        return frame

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path


# --- Segmentation ---
def contiguous_runs(index_set):
    """Maximal [start, stop) runs of consecutive positions in an index set."""
    index = np.unique(np.asarray(index_set, dtype=np.int64))
    if len(index) == 0:
        return []
    breaks = np.flatnonzero(np.diff(index) != 1)
    starts = np.concatenate([[index[0]], index[breaks + 1]])
    stops = np.concatenate([index[breaks] + 1, [index[-1] + 1]])
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


def segment_windows(values, labels, index_set, seg_len, stride):
    """
    All seg_len windows lying wholly inside one contiguous run of index_set,
    stepping by stride from each run's start. A window is labeled 1 iff any
    covered timestep is.
    """
    if seg_len < 2 or stride < 1:
        raise FeatureError(f"need seg_len >= 2 and stride >= 1, got {seg_len}, {stride}")
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    starts, runs = [], []
    for run_id, (a, b) in enumerate(contiguous_runs(index_set)):
        if b > len(values):
            raise FeatureError(f"index set reaches {b} beyond series length {len(values)}")
        if b - a >= seg_len:
            run_starts = np.arange(a, b - seg_len + 1, stride, dtype=np.int64)
            starts.append(run_starts)
            runs.append(np.full(len(run_starts), run_id, dtype=np.int64))
    if not starts:
        return SegmentBatch(
            np.zeros(0, dtype=np.int64), np.zeros((0, seg_len)), np.zeros(0, dtype=np.int8),
            np.zeros(0, dtype=np.int64), seg_len,
        )
    starts = np.concatenate(starts)
    windows = sliding_window_view(values, seg_len)[starts]
    counts = np.concatenate([[0], np.cumsum(labels)])
    window_labels = (counts[starts + seg_len] - counts[starts] > 0).astype(np.int8)
    return SegmentBatch(starts, np.array(windows), window_labels, np.concatenate(runs), seg_len)


def segmentize(series, index_set, seg_len, stride):
    batch = segment_windows(series.values, series.labels, index_set, seg_len, stride)
    return [
        Segment(int(s), int(s) + seg_len, batch.windows[i], int(batch.labels[i]))
        for i, s in enumerate(batch.starts)
    ]


# --- Base features ---
def base_feature_matrix(windows):
    """The nine base descriptors for each row of an (R, T) window matrix."""
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    T = x.shape[1]
    if T < 2:
        raise FeatureError(f"segments need at least 2 samples, got {T}")
    if not np.all(np.isfinite(x)):
        raise FeatureError("non-finite values in segment")
    if len(x) == 0:
        return np.zeros((0, len(BASE_FEATURE_NAMES)))

    mu = x.mean(axis=1)
    centered = x - mu[:, None]
    var = np.mean(centered**2, axis=1)
    std = np.sqrt(var)
    degenerate = std <= DEGENERATE_STD * np.maximum(1.0, np.abs(mu))
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(degenerate, 0.0, stats.skew(x, axis=1, bias=True))
        kurt = np.where(degenerate, 0.0, stats.kurtosis(x, axis=1, fisher=True, bias=True))

    half = T // 2
    hann = signal.get_window("hann", T)
    windowed = fft.rfft(x * hann, axis=1)[:, 1:half + 1]
    stft_energy = np.sum(np.abs(windowed) ** 2, axis=1)

    magnitude = np.abs(fft.rfft(x, axis=1)[:, 1:half + 1])
    freqs = np.arange(1, half + 1) / T
    total = magnitude.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        centroid = np.where(total > 0, (magnitude @ freqs) / np.where(total > 0, total, 1.0), 0.0)

    t = np.arange(T, dtype=np.float64)
    tc = t - t.mean()
    slope = (centered @ tc) / np.sum(tc**2)
    diff_var = np.var(np.diff(x, axis=1), axis=1)

    return np.column_stack([mu, var, std, skew, kurt, stft_energy, centroid, slope, diff_var])


def base_features(segment):
    values = segment.values if isinstance(segment, Segment) else segment
    return base_feature_matrix(np.asarray(values, dtype=np.float64)[None, :])[0]


def window_feature_matrix(batch, extra=None, extra_names=()):
    """Base features of a SegmentBatch, optionally followed by extra columns (shapelet features)."""
    rows = base_feature_matrix(batch.windows) if len(batch) else np.zeros((0, len(BASE_FEATURE_NAMES)))
    names = BASE_FEATURE_NAMES
    if extra is not None:
        rows = np.hstack([rows, np.asarray(extra, dtype=np.float64).reshape(len(rows), -1)])
        names = names + tuple(extra_names)
    return FeatureMatrix(rows, batch.spans, batch.labels, names, batch.runs)


# --- Pooling ---
def _pool_bounds(R, L_p, S_p):
    if R >= L_p:
        n_full = (R - L_p) // S_p + 1
        bounds = [(i * S_p, i * S_p + L_p) for i in range(n_full)]
    else:
        n_full = 0
        bounds = []
    last_end = bounds[-1][1] if bounds else 0
    if n_full * S_p < R and last_end < R:
        bounds.append((n_full * S_p, R))
    return bounds


def rolling_minmax_pool(features, L_p, S_p):
    """
    Rolling min and max of each feature over L_p consecutive rows, stride
    S_p. Pooling restarts at each contiguous run so no pooled row spans a
    mask hole. A trailing partial window keeps the last rows of a run.
    """
    if L_p < 1 or S_p < 1:
        raise FeatureError(f"need L_p >= 1 and S_p >= 1, got {L_p}, {S_p}")
    if len(features) < 1:
        raise FeatureError("cannot pool an empty feature matrix")
    rows, spans, labels, runs = [], [], [], []
    run_ids = features.runs
    boundaries = np.flatnonzero(np.diff(run_ids) != 0) + 1
    for lo, hi in zip(np.concatenate([[0], boundaries]), np.concatenate([boundaries, [len(features)]])):
        block = features.rows[lo:hi]
        for a, b in _pool_bounds(hi - lo, L_p, S_p):
            rows.append(np.concatenate([block[a:b].min(axis=0), block[a:b].max(axis=0)]))
            spans.append((features.spans[lo + a, 0], features.spans[lo + b - 1, 1]))
            labels.append(int(features.labels[lo + a:lo + b].max()))
            runs.append(run_ids[lo])
    names = tuple(f"{n}_min" for n in features.feature_names) + tuple(f"{n}_max" for n in features.feature_names)
    return FeatureMatrix(np.array(rows), np.array(spans), np.array(labels), names, np.array(runs))
