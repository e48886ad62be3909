from dataclasses import dataclass
from typing import Optional

import numpy as np

from common.errors import LeakageError, MaskingError

# --- Configuration ---
DEFAULT_MIN_SEGMENT = 2


def intervals_to_index(intervals):
    """Expands half-open [start, stop) intervals into a sorted index array."""
    parts = [np.arange(start, stop, dtype=np.int64) for start, stop in intervals if stop > start]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


def _longest_run(intervals):
    return max((stop - start for start, stop in intervals), default=0)


def _split_even(total, parts):
    """Equal pieces of [0, total); the last one absorbs the remainder."""
    size = total // parts
    bounds = [(i * size, (i + 1) * size) for i in range(parts - 1)]
    bounds.append(((parts - 1) * size, total))
    return bounds


def _lift(piece, hole_start, hole_stop):
    """Maps a [p0, p1) piece of the concatenated x̂_n back onto series positions around the hole."""
    p0, p1 = piece
    shift = hole_stop - hole_start
    if p1 <= hole_start:
        return ((p0, p1),)
    if p0 >= hole_start:
        return ((p0 + shift, p1 + shift),)
    return ((p0, hole_start), (hole_stop, p1 + shift))


@dataclass(frozen=True)
class MaskingPlan:
    """
    Two-level partition of one series. level1[n-1] is x_n; level2[n-1][m-1]
    holds the one or two intervals of x̂_{n,m}. The tail cca_span is kept
    apart from every level.
    """

    series_len: int
    N: int
    M: int
    cca_span: tuple
    level1: tuple
    level2: tuple
    channel_id: Optional[str] = None

    @property
    def pre_tail_len(self):
        return self.cca_span[0]

    def xhat_n(self, n):
        start, stop = self.level1[n - 1]
        return tuple(iv for iv in ((0, start), (stop, self.pre_tail_len)) if iv[1] > iv[0])

    def to_dict(self):
        return {
            "channel_id": self.channel_id,
            "series_len": self.series_len,
            "N": self.N,
            "M": self.M,
            "cca_span": list(self.cca_span),
            "level1": [list(iv) for iv in self.level1],
            "level2": [[[list(iv) for iv in piece] for piece in row] for row in self.level2],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            series_len=int(data["series_len"]),
            N=int(data["N"]),
            M=int(data["M"]),
            cca_span=tuple(data["cca_span"]),
            level1=tuple(tuple(iv) for iv in data["level1"]),
            level2=tuple(
                tuple(tuple(tuple(iv) for iv in piece) for piece in row) for row in data["level2"]
            ),
            channel_id=data.get("channel_id"),
        )


@dataclass(frozen=True, eq=False)
class MaskedView:
    n: int
    m: int
    x_n: np.ndarray
    xhat_nm: np.ndarray
    remainder: np.ndarray
    cca: np.ndarray


def build_masking_plan(series_len, N, M, cca_len, min_segment=DEFAULT_MIN_SEGMENT, channel_id=None):
    """
    Splits the pre-tail region into N equal level-1 intervals; for each n the
    complement x̂_n is split, as a concatenated index list, into M pieces.
    Every x_n and every x̂_{n,m} must hold a contiguous run of min_segment
    positions so features can be extracted from it.
    """
    if N < 1 or M < 1:
        raise MaskingError(f"N and M must be >= 1, got N={N}, M={M}")
    if cca_len < 0:
        raise MaskingError(f"cca_len must be >= 0, got {cca_len}")
    pre = series_len - cca_len
    if pre < N * M * min_segment:
        raise MaskingError(
            f"series too short: {series_len} positions leave {pre} before the tail, "
            f"need at least {N * M * min_segment} for N={N}, M={M}, segment {min_segment}"
        )
    if N == 1:
        raise MaskingError("x̂_n empty: N=1 leaves no data outside x_1")

    level1 = tuple(_split_even(pre, N))
    level2 = []
    for n, (start, stop) in enumerate(level1, start=1):
        if stop - start < min_segment:
            raise MaskingError(f"series too short: x_{n} holds {stop - start} positions, need {min_segment}")
        total = pre - (stop - start)
        pieces = []
        for m, piece in enumerate(_split_even(total, M), start=1):
            lifted = _lift(piece, start, stop)
            if _longest_run(lifted) < min_segment:
                raise MaskingError(
                    f"series too short: x̂_({n},{m}) has no contiguous run of {min_segment} positions"
                )
            pieces.append(lifted)
        level2.append(tuple(pieces))
    return MaskingPlan(series_len, N, M, (pre, series_len), level1, tuple(level2), channel_id)


def view(plan, n, m):
    """The three disjoint index sets of configuration (n, m), 1-based, plus the tail."""
    if not (1 <= n <= plan.N and 1 <= m <= plan.M):
        raise MaskingError(f"index out of range: (n={n}, m={m}) for N={plan.N}, M={plan.M}")
    pieces = plan.level2[n - 1]
    rest = [iv for j, piece in enumerate(pieces, start=1) if j != m for iv in piece]
    return MaskedView(
        n=n,
        m=m,
        x_n=intervals_to_index([plan.level1[n - 1]]),
        xhat_nm=intervals_to_index(pieces[m - 1]),
        remainder=np.sort(intervals_to_index(rest)),
        cca=intervals_to_index([plan.cca_span]),
    )


def audit_plan(plan):
    """Raises LeakageError unless every (n, m) view plus the tail partitions the series exactly."""
    pre = plan.pre_tail_len
    covered = np.zeros(pre, dtype=np.int64)
    for start, stop in plan.level1:
        covered[start:stop] += 1
    if np.any(covered != 1):
        raise LeakageError(f"channel {plan.channel_id}: level-1 intervals do not partition [0, {pre})")
    for n in range(1, plan.N + 1):
        for m in range(1, plan.M + 1):
            v = view(plan, n, m)
            counts = np.zeros(plan.series_len, dtype=np.int64)
            for index in (v.x_n, v.xhat_nm, v.remainder, v.cca):
                np.add.at(counts, index, 1)
            if np.any(counts != 1):
                raise LeakageError(
                    f"channel {plan.channel_id} (n={n}, m={m}): index sets overlap or leave gaps"
                )
    return True


def plan_report(plans):
    """JSON-ready audit report of per-channel masking plans."""
    return {
        channel_id: {
            **plan.to_dict(),
            "sizes": {
                "cca": plan.cca_span[1] - plan.cca_span[0],
                "x_n": [stop - start for start, stop in plan.level1],
                "xhat_nm": [
                    [sum(stop - start for start, stop in piece) for piece in row] for row in plan.level2
                ],
            },
        }
        for channel_id, plan in plans.items()
    }
