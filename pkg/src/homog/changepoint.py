"""CUSUM contrast and binary segmentation on a sorted sequence.

Positions are 1-based as in the usual change-point notation: a change
point ``k`` separates ``b[k]`` from ``b[k + 1]``, so ``1 <= k < n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NotSorted, TooManyGroups

MAX_SWEEPS = 100


@dataclass(frozen=True)
class SegmentationResult:
    change_points: tuple
    split_stats: tuple
    n: int
    threshold: float | None = None
    count: int | None = None

    def __post_init__(self):
        cps = tuple(int(k) for k in self.change_points)
        if len(cps) != len(self.split_stats):
            raise ValueError("one statistic per change point is required")
        if any(not 1 <= k < self.n for k in cps) or any(a >= b for a, b in zip(cps, cps[1:])):
            raise ValueError(f"change points must be strictly increasing in [1, {self.n})")
        object.__setattr__(self, "change_points", cps)
        object.__setattr__(self, "split_stats", tuple(float(s) for s in self.split_stats))

    @property
    def n_groups(self) -> int:
        return len(self.change_points) + 1


def _as_sorted(b):
    b = np.asarray(b, dtype=float).ravel()
    if b.size >= 2 and np.any(np.diff(b) < 0):
        raise NotSorted("sequence must be sorted ascending")
    return b


def _region_deltas(b, i, j):
    """Delta_{ij}(kappa) for kappa = i..j-1 (1-based, inclusive region)."""
    seg = b[i - 1:j]
    seg = seg - seg[0]  # constant regions give exact zeros
    cs = np.cumsum(seg)
    total = cs[-1]
    n = j - i + 1
    left_n = np.arange(1, n)
    right_n = n - left_n
    left_mean = cs[:-1] / left_n
    right_mean = (total - cs[:-1]) / right_n
    return np.sqrt(left_n * right_n / n) * np.abs(right_mean - left_mean)


def _region_argmax(b, i, j):
    d = _region_deltas(b, i, j)
    top = d.max()
    # smallest kappa among maximisers; cumulative sums blur exact ties
    k = int(np.argmax(d >= top - 1e-12 * max(top, np.abs(b[i - 1:j]).max())))
    return i + k, float(d[k])


def delta_stat(b, i: int, j: int, kappa: int) -> float:
    """CUSUM contrast of the region ``b[i..j]`` split after position ``kappa``."""
    b = np.asarray(b, dtype=float).ravel()
    if not (1 <= i <= kappa < j <= b.size):
        raise IndexError(f"need 1 <= i <= kappa < j <= n, got i={i}, kappa={kappa}, j={j}, n={b.size}")
    left = b[i - 1:kappa].mean()
    right = b[kappa:j].mean()
    return float(np.sqrt((j - kappa) * (kappa - i + 1) / (j - i + 1)) * abs(right - left))


def _recurse(b, delta):
    """All (location, statistic) pairs accepted by thresholded recursion."""
    accepted = []
    stack = [(1, b.size)]
    while stack:
        i, j = stack.pop()
        if j <= i:
            continue
        k, d = _region_argmax(b, i, j)
        if d <= delta:
            continue
        accepted.append((k, d))
        stack.append((k + 1, j))
        stack.append((i, k))
    return accepted


def _result(pairs, n, threshold=None, count=None):
    pairs = sorted(pairs)
    return SegmentationResult(tuple(k for k, _ in pairs), tuple(d for _, d in pairs), n,
                              threshold, count)


def binary_segment(b, delta: float) -> SegmentationResult:
    """Split recursively while the best contrast in a region exceeds ``delta``."""
    b = _as_sorted(b)
    if b.size < 2:
        raise ValueError("need at least two values")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return _result(_recurse(b, delta), b.size, threshold=delta)


def exhaustive_splits(b) -> list:
    """Every split accepted at ``delta = 0``, as (location, statistic) pairs.

    Ordered by decreasing statistic, ties by smaller location.
    """
    b = _as_sorted(b)
    if b.size < 2:
        return []
    return sorted(_recurse(b, 0.0), key=lambda kd: (-kd[1], kd[0]))


def top_splits(ranked_splits, n: int, H: int) -> SegmentationResult:
    """Keep the ``H - 1`` strongest splits of :func:`exhaustive_splits`.

    Fewer are returned when ties in the sequence leave fewer splits.
    """
    if H < 1:
        raise ValueError("H must be at least 1")
    if H > n:
        raise TooManyGroups(f"cannot form {H} groups from {n} values")
    return _result(ranked_splits[: H - 1], n, count=H)


def binary_segment_count(b, H: int) -> SegmentationResult:
    """Segmentation into (at most) ``H`` groups by acceptance-statistic ranking."""
    b = _as_sorted(b)
    if H > b.size:
        raise TooManyGroups(f"cannot form {H} groups from {b.size} values")
    return top_splits(exhaustive_splits(b), b.size, H)


def post_process(b, result: SegmentationResult) -> SegmentationResult:
    """Re-place each change point at the best split between its neighbours.

    Sweeps left to right until a sweep moves nothing (at most 100 sweeps).
    The number of change points is unchanged.
    """
    b = _as_sorted(b)
    cps = list(result.change_points)
    stats = list(result.split_stats)
    if not cps:
        return result
    for _ in range(MAX_SWEEPS):
        moved = False
        for r in range(len(cps)):
            lo = cps[r - 1] if r > 0 else 0
            hi = cps[r + 1] if r + 1 < len(cps) else b.size
            k, d = _region_argmax(b, lo + 1, hi)
            stats[r] = d
            if k != cps[r]:
                cps[r] = k
                moved = True
        if not moved:
            break
    return SegmentationResult(tuple(cps), tuple(stats), b.size, result.threshold, result.count)
