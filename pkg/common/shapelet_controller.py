from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from common.errors import ShapeletError
from common.feature_controller import contiguous_runs, segment_windows
from utils.log import get_logger

logger = get_logger(__name__)

# --- Configuration ---
FORMAT_VERSION = 1
DIRICHLET_SOURCE = "dirichlet"
ANOMALY_SOURCE = "anomaly"
SCORE_QUANTILE = 0.75
CANDIDATE_CHUNK = 256
ZERO_STD = 1e-12


def znormalize(vector):
    """Zero mean, unit population variance; a constant vector maps to zeros."""
    v = np.asarray(vector, dtype=np.float64)
    std = v.std()
    if std <= ZERO_STD * max(1.0, abs(v.mean())):
        return np.zeros_like(v)
    return (v - v.mean()) / std


def footprint(length, dilation):
    return (length - 1) * dilation + 1


@dataclass(frozen=True, eq=False)
class Shapelet:
    pattern: np.ndarray
    length: int
    dilation: int = 1
    bias: float = 0.0
    source: str = DIRICHLET_SOURCE
    source_start: Optional[int] = None

    def __post_init__(self):
        pattern = np.array(self.pattern, dtype=np.float64)
        pattern.setflags(write=False)
        if len(pattern) != self.length:
            raise ShapeletError(f"pattern length {len(pattern)} != declared length {self.length}")
        if self.dilation < 1:
            raise ShapeletError(f"dilation must be >= 1, got {self.dilation}")
        if abs(pattern.mean()) > 1e-9 or abs(pattern.var() - 1.0) > 1e-6:
            raise ShapeletError("shapelet pattern is not z-normalized")
        object.__setattr__(self, "pattern", pattern)

    @property
    def footprint(self):
        return footprint(self.length, self.dilation)

    def to_dict(self):
        return {
            "pattern": [float(v) for v in self.pattern],
            "length": self.length,
            "dilation": self.dilation,
            "bias": float(self.bias),
            "source": self.source,
            "source_start": self.source_start,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            np.asarray(data["pattern"], dtype=np.float64),
            int(data["length"]),
            int(data["dilation"]),
            float(data["bias"]),
            data["source"],
            data.get("source_start"),
        )


@dataclass(frozen=True, eq=False)
class ShapeletPool:
    shapelets: tuple
    quality: tuple
    padding: bool = True

    def __post_init__(self):
        shapelets = tuple(self.shapelets)
        quality = tuple(float(q) for q in self.quality)
        if not shapelets:
            raise ShapeletError("shapelet pool is empty")
        if len(quality) != len(shapelets):
            raise ShapeletError("one quality score per shapelet is required")
        if any(b > a for a, b in zip(quality, quality[1:])):
            raise ShapeletError("pool scores must be sorted non-increasing")
        object.__setattr__(self, "shapelets", shapelets)
        object.__setattr__(self, "quality", quality)

    @property
    def K(self):
        return len(self.shapelets)

    @property
    def feature_names(self):
        return tuple(name for i in range(self.K) for name in (f"shp{i}_max", f"shp{i}_min"))

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "K": self.K,
            "padding": self.padding,
            "shapelets": [
                {**s.to_dict(), "quality": q} for s, q in zip(self.shapelets, self.quality)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != FORMAT_VERSION:
            raise ShapeletError(f"unsupported shapelet pool format {data.get('format_version')}")
        records = data["shapelets"]
        return cls(
            tuple(Shapelet.from_dict(r) for r in records),
            tuple(r["quality"] for r in records),
            bool(data["padding"]),
        )


# --- Similarity ---
def window_tensor(windows, length, dilation, padding):
    """
    z-normalized dilated windows of every segment row: shape (R, P, length)
    with P = padded width - footprint + 1. Padding replicates the edge
    samples footprint // 2 times on each side.
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    span = footprint(length, dilation)
    if padding:
        pad = span // 2
        x = np.pad(x, ((0, 0), (pad, pad)), mode="edge")
    if span > x.shape[1]:
        raise ShapeletError(f"shapelet footprint {span} exceeds padded segment length {x.shape[1]}")
    z = sliding_window_view(x, span, axis=1)[:, :, ::dilation]
    mean = z.mean(axis=2, keepdims=True)
    std = z.std(axis=2, keepdims=True)
    flat = std <= ZERO_STD * np.maximum(1.0, np.abs(mean))
    return np.where(flat, 0.0, (z - mean) / np.where(flat, 1.0, std))


def similarity_profile(segment, shapelet, padding=True):
    z = window_tensor(segment, shapelet.length, shapelet.dilation, padding)[0]
    return z @ shapelet.pattern + shapelet.bias


def shapelet_feature_matrix(windows, pool, cache=None):
    """
    Two features per shapelet and segment row: max and min of the
    similarity profile divided by the shapelet length, in pool order.
    cache maps (length, dilation, padding) to window tensors of these rows.
    """
    cache = {} if cache is None else cache
    rows = len(windows)
    out = np.zeros((rows, 2 * pool.K))
    if rows == 0:
        return out
    for i, shp in enumerate(pool.shapelets):
        key = (shp.length, shp.dilation, pool.padding)
        if key not in cache:
            cache[key] = window_tensor(windows, *key)
        profile = cache[key] @ shp.pattern + shp.bias
        out[:, 2 * i] = profile.max(axis=1) / shp.length
        out[:, 2 * i + 1] = profile.min(axis=1) / shp.length
    return out


def shapelet_features(segment, pool):
    return shapelet_feature_matrix(np.asarray(segment, dtype=np.float64)[None, :], pool)[0]


# --- Mining ---
def score_candidates(candidates, tensor, segment_labels, bias=0.0):
    """
    q75 of each candidate's max similarity over anomalous segments minus
    q75 over nominal ones. An empty side contributes 0.
    """
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, tensor.shape[-1])
    if len(candidates) == 0:
        return np.zeros(0)
    if tensor.shape[0] == 0:
        return np.zeros(len(candidates))
    similarity = np.concatenate(
        [
            (tensor @ candidates[i:i + CANDIDATE_CHUNK].T + bias).max(axis=1)
            for i in range(0, len(candidates), CANDIDATE_CHUNK)
        ],
        axis=1,
    ) / candidates.shape[1]
    anomalous = np.asarray(segment_labels).astype(bool)

    def q75(block):
        if block.shape[0] == 0:
            return np.zeros(block.shape[1])
        return np.quantile(block, SCORE_QUANTILE, axis=0, method="linear")

    return q75(similarity[anomalous]) - q75(similarity[~anomalous])


def _anomaly_candidates(values, labels, mine_idx, length, dilation):
    span = footprint(length, dilation)
    counts = np.concatenate([[0], np.cumsum(labels)])
    starts = []
    for a, b in contiguous_runs(mine_idx):
        if b - a >= span:
            s = np.arange(a, b - span + 1, dtype=np.int64)
            starts.append(s[counts[s + span] - counts[s] > 0])
    starts = np.concatenate(starts) if starts else np.zeros(0, dtype=np.int64)
    patterns, kept = [], []
    for s in starts:
        z = znormalize(values[s:s + span:dilation])
        if np.any(z):
            patterns.append(z)
            kept.append(int(s))
    return np.array(patterns).reshape(-1, length), np.array(kept, dtype=np.int64)


def _dirichlet_patterns(rng, count, length):
    if count <= 0:
        return np.zeros((0, length))
    draws = rng.dirichlet(np.ones(length), size=count)
    return np.array([znormalize(d) for d in draws])


def mine_shapelets(
    series, mine_idx, shp_len, K, seed, seg_len, stride, dilation=1, bias=0.0, padding=True, max_candidates=0,
):
    """
    Mines K shapelets from the anomalous subsequences of mine_idx.

    Candidates are every z-normalized window of mine_idx touching an
    anomalous timestep, topped up with Dirichlet(1) draws when fewer than K
    exist. Each is scored on the feature segments of mine_idx; greedy
    selection keeps the best while no two anomaly-sourced picks start closer
    than shp_len / 2. A positive max_candidates scores a seeded random
    subset of that many anomalous candidates; 0 scores all of them.
    """
    if max_candidates < 0:
        raise ShapeletError(f"max_candidates must be >= 0, got {max_candidates}")
    if shp_len < 3:
        raise ShapeletError(f"shp_len must be >= 3, got {shp_len}")
    if K < 1:
        raise ShapeletError(f"K must be >= 1, got {K}")
    mine_idx = np.unique(np.asarray(mine_idx, dtype=np.int64))
    if len(mine_idx) and (mine_idx[0] < 0 or mine_idx[-1] >= len(series)):
        raise ShapeletError("mining index set lies outside the series")
    span = footprint(shp_len, dilation)
    if max((b - a for a, b in contiguous_runs(mine_idx)), default=0) < span:
        raise ShapeletError(f"mining region too small to host one window of footprint {span}")

    rng = np.random.default_rng(seed)
    values, labels = series.values, series.labels
    patterns, starts = _anomaly_candidates(values, labels, mine_idx, shp_len, dilation)
    if max_candidates and len(patterns) > max_candidates:
        keep = np.sort(rng.choice(len(patterns), size=max_candidates, replace=False))
        patterns, starts = patterns[keep], starts[keep]

    batch = segment_windows(values, labels, mine_idx, seg_len, stride)
    tensor = window_tensor(batch.windows, shp_len, dilation, padding) if len(batch) else np.zeros((0, 1, shp_len))

    records = [(ANOMALY_SOURCE, int(s)) for s in starts]
    dirichlet = _dirichlet_patterns(rng, K - len(patterns), shp_len)
    records += [(DIRICHLET_SOURCE, None)] * len(dirichlet)
    patterns = np.vstack([patterns, dirichlet])
    scores = score_candidates(patterns, tensor, batch.labels, bias)

    order = np.argsort(-scores, kind="stable")
    gap = shp_len / 2
    chosen, chosen_starts = [], []
    for i in order:
        source, start = records[i]
        if source == ANOMALY_SOURCE and any(abs(start - s) < gap for s in chosen_starts):
            continue
        chosen.append(i)
        if source == ANOMALY_SOURCE:
            chosen_starts.append(start)
        if len(chosen) == K:
            break

    if len(chosen) < K:
        extra = _dirichlet_patterns(rng, K - len(chosen), shp_len)
        extra_scores = score_candidates(extra, tensor, batch.labels, bias)
        offset = len(patterns)
        patterns = np.vstack([patterns, extra])
        scores = np.concatenate([scores, extra_scores])
        records += [(DIRICHLET_SOURCE, None)] * len(extra)
        chosen += list(range(offset, offset + len(extra)))

    chosen = sorted(chosen, key=lambda i: -scores[i])
    shapelets = tuple(
        Shapelet(patterns[i], shp_len, dilation, bias, records[i][0], records[i][1]) for i in chosen
    )
    mined = sum(1 for s in shapelets if s.source == ANOMALY_SOURCE)
    logger.debug(f"mined {mined} anomaly-sourced + {K - mined} dirichlet shapelet(s)")
    return ShapeletPool(shapelets, tuple(float(scores[i]) for i in chosen), padding)
