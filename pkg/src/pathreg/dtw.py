"""Multivariate dynamic time warping over 3D paths and correspondence selection.

The alignment runs a single dynamic program over the 3D Euclidean distance
between points (not three per-axis alignments), with the symmetric step set
{diagonal, vertical, horizontal} at unit weights, anchored at both ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .errors import DegenerateInput, InfeasibleBand, InvalidArgument
from .geometry import Path3

# Backtrack step codes stored by the kernel.
_STEP_NONE = 0
_STEP_DIAG = 1
_STEP_HORIZ = 2  # consumes one index of the second signal
_STEP_VERT = 3   # consumes one index of the first signal


@dataclass(frozen=True)
class WarpPath:
    """Monotone boundary-anchored alignment between two signals.

    ``pairs[k] = (i, j)`` matches index i of the first signal (centerline) to
    index j of the second (EM path); ``pair_costs`` are the Euclidean
    distances of the matched points in the space the alignment ran in.
    """

    pairs: NDArray[np.int64]        # (K, 2)
    pair_costs: NDArray[np.float64]  # (K,)
    total_cost: float

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        costs = np.asarray(self.pair_costs, dtype=np.float64)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
            raise InvalidArgument(f"warp pairs must have shape (K, 2), got {pairs.shape}")
        if costs.shape != (pairs.shape[0],):
            raise InvalidArgument("pair_costs must match the number of pairs")
        if pairs[0, 0] != 0 or pairs[0, 1] != 0:
            raise InvalidArgument("warp path must start at (0, 0)")
        steps = np.diff(pairs, axis=0)
        if steps.size and not (
            np.all(steps >= 0) and np.all(steps <= 1) and np.all(steps.sum(axis=1) >= 1)
        ):
            raise InvalidArgument("warp steps must advance each index by 0 or 1, never (0, 0)")
        if not np.isclose(self.total_cost, costs.sum(), rtol=0.0, atol=1e-9):
            raise InvalidArgument("total_cost must equal the sum of pair costs")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "pair_costs", costs)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs.tolist(),
            "pair_costs": self.pair_costs.tolist(),
            "total_cost": float(self.total_cost),
        }


def check_warp_path(warp: WarpPath, n: int, m: int) -> None:
    """Raise InvalidArgument unless the warp is structurally valid over (n, m) signals.

    Checks the boundary anchors, monotone unit steps, index ranges, and
    total-cost consistency (construction re-runs the step checks).
    """
    WarpPath(warp.pairs, warp.pair_costs, warp.total_cost)
    last = warp.pairs[-1]
    if last[0] != n - 1 or last[1] != m - 1:
        raise InvalidArgument(f"warp path must end at ({n - 1}, {m - 1}), got {tuple(last)}")
    if warp.pairs[:, 0].max() >= n or warp.pairs[:, 1].max() >= m:
        raise InvalidArgument("warp indices exceed signal lengths")


@dataclass(frozen=True)
class CorrespondenceSet:
    """Point pairs picked from a warp path, in original (un-normalized) coordinates."""

    centerline_points: NDArray[np.float64]  # (K, 3)
    em_points: NDArray[np.float64]          # (K, 3)
    centerline_indices: NDArray[np.int64]
    em_indices: NDArray[np.int64]
    pair_costs: NDArray[np.float64]
    segment_ids: NDArray[np.int64]          # one of {0, 1, 2} per pair
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        cl = np.asarray(self.centerline_points, dtype=np.float64)
        em = np.asarray(self.em_points, dtype=np.float64)
        ci = np.asarray(self.centerline_indices, dtype=np.int64)
        ei = np.asarray(self.em_indices, dtype=np.int64)
        costs = np.asarray(self.pair_costs, dtype=np.float64)
        seg = np.asarray(self.segment_ids, dtype=np.int64)
        k = ci.shape[0]
        if not (cl.shape == (k, 3) and em.shape == (k, 3) and ei.shape == (k,)
                and costs.shape == (k,) and seg.shape == (k,)):
            raise InvalidArgument("correspondence arrays must have consistent lengths")
        if k and len({(int(i), int(j)) for i, j in zip(ci, ei)}) != k:
            raise InvalidArgument("duplicate (centerline, em) index pair")
        for name, arr in (("centerline_points", cl), ("em_points", em), ("pair_costs", costs)):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{name} must be finite")
        object.__setattr__(self, "centerline_points", cl)
        object.__setattr__(self, "em_points", em)
        object.__setattr__(self, "centerline_indices", ci)
        object.__setattr__(self, "em_indices", ei)
        object.__setattr__(self, "pair_costs", costs)
        object.__setattr__(self, "segment_ids", seg)
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def __len__(self) -> int:
        return self.centerline_indices.shape[0]

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(
            np.empty((0, 3)), np.empty((0, 3)),
            np.empty(0, np.int64), np.empty(0, np.int64),
            np.empty(0), np.empty(0, np.int64),
        )

    def to_dict(self) -> dict:
        return {
            "pairs": [
                {
                    "centerline_index": int(self.centerline_indices[k]),
                    "em_index": int(self.em_indices[k]),
                    "centerline_point": self.centerline_points[k].tolist(),
                    "em_point": self.em_points[k].tolist(),
                    "pair_cost": float(self.pair_costs[k]),
                    "segment": int(self.segment_ids[k]),
                }
                for k in range(len(self))
            ],
            "warnings": list(self.warnings),
        }


@njit(cache=True)
def _dtw_kernel(a, b, band):  # pragma: no cover - exercised through dtw_align
    n = a.shape[0]
    m = b.shape[0]
    acc = np.full((n, m), np.inf)
    steps = np.zeros((n, m), dtype=np.int8)
    ratio = m / n
    for i in range(n):
        if band >= 0:
            center = i * ratio
            lo = int(np.ceil(center - band))
            hi = int(np.floor(center + band))
            if lo < 0:
                lo = 0
            if hi > m - 1:
                hi = m - 1
        else:
            lo = 0
            hi = m - 1
        for j in range(lo, hi + 1):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            if i == 0 and j == 0:
                acc[0, 0] = d
                continue
            # Tie-break preference: diagonal, then the step that advances the
            # second (EM) index, then the first. Strict < keeps earlier wins.
            best = np.inf
            code = _STEP_NONE
            if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                best = acc[i - 1, j - 1]
                code = _STEP_DIAG
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
                code = _STEP_HORIZ
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
                code = _STEP_VERT
            if code != _STEP_NONE:
                acc[i, j] = best + d
                steps[i, j] = code
    return acc, steps


@njit(cache=True)
def _backtrack(steps):  # pragma: no cover - exercised through dtw_align
    i = steps.shape[0] - 1
    j = steps.shape[1] - 1
    length = 1
    ii, jj = i, j
    while ii != 0 or jj != 0:
        code = steps[ii, jj]
        if code == _STEP_DIAG:
            ii -= 1
            jj -= 1
        elif code == _STEP_HORIZ:
            jj -= 1
        else:
            ii -= 1
        length += 1
    pairs = np.empty((length, 2), dtype=np.int64)
    k = length - 1
    while True:
        pairs[k, 0] = i
        pairs[k, 1] = j
        if i == 0 and j == 0:
            break
        code = steps[i, j]
        if code == _STEP_DIAG:
            i -= 1
            j -= 1
        elif code == _STEP_HORIZ:
            j -= 1
        else:
            i -= 1
        k -= 1
    return pairs


def dtw_align(a: Path3, b: Path3, band_radius: int | None = None) -> WarpPath:
    """Globally optimal monotone alignment of two 3D paths.

    Local cost is the Euclidean distance between matched points; the path is
    anchored at (0, 0) and (n-1, m-1). ``band_radius`` restricts matches to
    the Sakoe-Chiba band |i * m/n - j| <= band_radius; the result is then
    optimal within the band. Ties during backtracking prefer the diagonal
    step, then the step advancing the second signal's index.
    """
    if len(a) < 1 or len(b) < 1:
        raise DegenerateInput("both signals must be non-empty")
    if band_radius is not None and band_radius < 0:
        raise InvalidArgument("band_radius must be non-negative")
    band = -1 if band_radius is None else int(band_radius)
    acc, steps = _dtw_kernel(a.points, b.points, band)
    total = acc[-1, -1]
    if not np.isfinite(total):
        raise InfeasibleBand(
            f"band radius {band_radius} admits no monotone path for lengths "
            f"({len(a)}, {len(b)})"
        )
    pairs = _backtrack(steps)
    diffs = a.points[pairs[:, 0]] - b.points[pairs[:, 1]]
    costs = np.linalg.norm(diffs, axis=1)
    return WarpPath(pairs=pairs, pair_costs=costs, total_cost=float(total))


def _segment_sizes(total: int) -> list[int]:
    base, rem = divmod(total, 3)
    return [base + (1 if s < rem else 0) for s in range(3)]


def select_correspondences(
    warp: WarpPath,
    centerline_orig: Path3,
    em_orig: Path3,
    per_segment: int = 10,
) -> CorrespondenceSet:
    """Pick the cheapest pairs from three equal contiguous thirds of a warp path.

    The warp pairs are split into three contiguous segments of near-equal
    count (remainders to earlier segments); within each segment the
    ``per_segment`` pairs with the smallest cost are selected, ties broken by
    smaller centerline index then smaller EM index. Points are read from the
    original-coordinate paths. A segment holding fewer than ``per_segment``
    pairs contributes all of them plus a ShortSegment warning.
    """
    if per_segment < 1:
        raise InvalidArgument(f"per_segment must be >= 1, got {per_segment}")
    if len(warp) < 3:
        raise DegenerateInput(f"warp path with {len(warp)} pairs cannot be split into 3 segments")
    if warp.pairs[:, 0].max() >= len(centerline_orig) or warp.pairs[:, 1].max() >= len(em_orig):
        raise InvalidArgument("warp indices exceed the provided paths")

    warnings: list[str] = []
    selected: list[int] = []
    segment_ids: list[int] = []
    start = 0
    for seg, size in enumerate(_segment_sizes(len(warp))):
        stop = start + size
        positions = np.arange(start, stop)
        if size < per_segment:
            warnings.append(
                f"ShortSegment: segment {seg} has only {size} pairs (< per_segment={per_segment})"
            )
            chosen = positions
        else:
            costs = warp.pair_costs[start:stop]
            cl_idx = warp.pairs[start:stop, 0]
            em_idx = warp.pairs[start:stop, 1]
            order = np.lexsort((em_idx, cl_idx, costs))
            chosen = positions[order[:per_segment]]
        chosen = np.sort(chosen)
        selected.extend(int(p) for p in chosen)
        segment_ids.extend([seg] * len(chosen))
        start = stop

    sel = np.asarray(selected, dtype=np.int64)
    cl_indices = warp.pairs[sel, 0]
    em_indices = warp.pairs[sel, 1]
    return CorrespondenceSet(
        centerline_points=centerline_orig.points[cl_indices],
        em_points=em_orig.points[em_indices],
        centerline_indices=cl_indices,
        em_indices=em_indices,
        pair_costs=warp.pair_costs[sel],
        segment_ids=np.asarray(segment_ids, dtype=np.int64),
        warnings=tuple(warnings),
    )
