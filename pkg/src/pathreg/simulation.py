"""Synthetic vascular phantom generation and EM acquisition simulation.

The generator builds a branching centerline tree from composed circular-arc
segments sized to a tabletop phantom: vessel radii between 2.5 and 7.5 mm,
per-branch arc length at most 220 mm, and the whole tree fitting a 220 mm
bounding region. Every phantom contains at least one stenosis-like radius
dip and one high-curvature bend. The acquisition simulator pulls a virtual
sensor along a centerline at a configurable speed and rate, with optional
Gaussian jitter, sample dropout, and short backward excursions, then places
the path in the EM frame via an injected ground-truth transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateInput, InvalidArgument
from .geometry import Frame, Path3, RigidTransform, rotation_from_axis_angle

RADIUS_MIN = 2.5
RADIUS_MAX = 7.5
MAX_BRANCH_LENGTH = 220.0
POINT_SPACING = 1.5  # mm between generated centerline vertices


def arc_length(points: NDArray[np.float64]) -> float:
    """Total polyline length in millimeters."""
    if points.shape[0] < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def cumulative_arc_length(points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Arc-length position of each vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate(([0.0], np.cumsum(seg)))


@dataclass(frozen=True)
class Branch:
    """One vessel branch: a centerline polyline with per-point radii."""

    id: int
    centerline: Path3
    radii: NDArray[np.float64]
    parent_id: int | None = None
    junction_index: int | None = None

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=np.float64)
        if radii.shape != (len(self.centerline),):
            raise InvalidArgument("radii must provide one value per centerline point")
        if not np.all(np.isfinite(radii)):
            raise InvalidArgument("radii must be finite")
        if np.any(radii < RADIUS_MIN - 1e-9) or np.any(radii > RADIUS_MAX + 1e-9):
            raise InvalidArgument(
                f"radii must stay within [{RADIUS_MIN}, {RADIUS_MAX}] mm"
            )
        if arc_length(self.centerline.points) > MAX_BRANCH_LENGTH + 1e-6:
            raise InvalidArgument(f"branch arc length exceeds {MAX_BRANCH_LENGTH} mm")
        if (self.parent_id is None) != (self.junction_index is None):
            raise InvalidArgument("parent_id and junction_index must be set together")
        object.__setattr__(self, "radii", radii)


@dataclass(frozen=True)
class PhantomModel:
    """Branching centerline tree; branch ``inlet_index`` is the inlet trunk."""

    branches: tuple[Branch, ...]
    inlet_index: int = 0

    def __post_init__(self):
        branches = tuple(self.branches)
        if len(branches) < 1:
            raise InvalidArgument("phantom needs at least one branch")
        by_id = {b.id: b for b in branches}
        if len(by_id) != len(branches):
            raise InvalidArgument("branch ids must be unique")
        if self.inlet_index not in by_id or by_id[self.inlet_index].parent_id is not None:
            raise InvalidArgument("inlet branch must exist and have no parent")
        for b in branches:
            if len(b.centerline) < 10:
                raise InvalidArgument(f"branch {b.id} has fewer than 10 points")
            if b.parent_id is not None:
                parent = by_id.get(b.parent_id)
                if parent is None:
                    raise InvalidArgument(f"branch {b.id} references unknown parent {b.parent_id}")
                if not 0 <= b.junction_index < len(parent.centerline):
                    raise InvalidArgument(f"branch {b.id} junction index out of range")
                gap = np.linalg.norm(
                    b.centerline.points[0] - parent.centerline.points[b.junction_index]
                )
                if gap > 1e-9:
                    raise InvalidArgument(
                        f"branch {b.id} does not start at its parent junction (gap {gap:.3e} mm)"
                    )
        object.__setattr__(self, "branches", branches)

    def branch(self, branch_id: int) -> Branch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise InvalidArgument(f"no branch with id {branch_id}")


@dataclass(frozen=True)
class AcquisitionConfig:
    """Virtual pullback parameters.

    ``pull_speed`` of None draws a speed uniformly from [10, 20] mm/s per
    acquisition (seeded); this mirrors a manual pull at 1-2 cm/s. Timestamps
    are emitted at the sample index over ``sample_rate``, so dropped samples
    leave gaps.
    """

    pull_speed: float | None = None
    sample_rate: float = 40.0
    noise_sigma: float = 0.5
    dropout_prob: float = 0.0
    backward_jitter_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pull_speed is not None and self.pull_speed <= 0:
            raise InvalidArgument("pull_speed must be > 0")
        if self.sample_rate <= 0:
            raise InvalidArgument("sample_rate must be > 0")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise InvalidArgument("dropout_prob must be in [0, 1)")
        if not 0 <= self.backward_jitter_prob < 1:
            raise InvalidArgument("backward_jitter_prob must be in [0, 1)")


def _unit(v: NDArray[np.float64]) -> NDArray[np.float64]:
    return v / np.linalg.norm(v)


def _perpendicular_axis(direction: NDArray[np.float64], rng: np.random.Generator):
    """Random unit vector orthogonal to ``direction``."""
    while True:
        v = rng.normal(size=3)
        v -= v.dot(direction) * direction
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def _walk_arcs(start, direction, arcs, spacing: float) -> NDArray[np.float64]:
    """Polyline from composed circular arcs: (axis, curvature_radius, length) triples."""
    points = [np.asarray(start, dtype=np.float64)]
    pos = points[0].copy()
    d = _unit(np.asarray(direction, dtype=np.float64))
    for axis, radius, length in arcs:
        steps = max(1, int(round(length / spacing)))
        step_len = length / steps
        rot = rotation_from_axis_angle(axis, step_len / radius)
        for _ in range(steps):
            d = _unit(rot @ d)
            pos = pos + d * step_len
            points.append(pos.copy())
    return np.asarray(points)


def _taper(start: float, end: float, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """Linearly tapering radii with a little smooth wobble, clipped to range."""
    base = np.linspace(start, end, n)
    phase = rng.uniform(0, 2 * np.pi)
    wobble = 0.15 * np.sin(np.linspace(0, 3 * np.pi, n) + phase)
    return np.clip(base + wobble, RADIUS_MIN, RADIUS_MAX)


def _apply_stenosis(radii: NDArray[np.float64], rng: np.random.Generator) -> NDArray[np.float64]:
    """Dip the radii over a short window, bottoming out no lower than RADIUS_MIN."""
    n = len(radii)
    center = rng.uniform(0.35, 0.65) * (n - 1)
    width = max(2.0, 0.06 * n)
    dip = 1.0 - 0.45 * np.exp(-(((np.arange(n) - center) / width) ** 2))
    return np.clip(radii * dip, RADIUS_MIN, RADIUS_MAX)


def generate_phantom(n_branches: int, seed: int) -> PhantomModel:
    """Deterministically generate a branching phantom with 1..12 branches.

    Branch 0 is the inlet trunk; every other branch bifurcates off an
    existing branch with its first point exactly on the parent centerline.
    Lengths are budgeted so every inlet-to-outlet route stays within the
    220 mm phantom scale, and the result is rescaled about the inlet if its
    bounding box exceeds that scale.
    """
    if not 1 <= n_branches <= 12:
        raise InvalidArgument(f"n_branches must be in [1, 12], got {n_branches}")
    rng = np.random.default_rng(seed)

    tight_branch = int(rng.integers(0, n_branches))

    def _arc_specs(direction, total_length, tight_first, local_rng):
        # Short, strong knees in differing planes separated by gentle runs:
        # the curvature profile is spiky and aperiodic, so the alignment has
        # distinctive anchors. Near-straight vessels leave the roll angle
        # unobservable and long constant-curvature sweeps let the fit slide
        # along the curve; both are avoided on purpose.
        specs = []
        remaining = total_length
        if tight_first:
            tight_len = min(25.0, 0.4 * total_length)
            specs.append((
                _perpendicular_axis(direction, local_rng),
                local_rng.uniform(15.0, 25.0),
                tight_len,
            ))
            remaining -= tight_len
        fractions = local_rng.dirichlet(np.ones(5)) * remaining
        for k, part in enumerate(fractions):
            radius = (
                local_rng.uniform(30.0, 50.0) if k % 2 == 1
                else local_rng.uniform(100.0, 200.0)
            )
            specs.append((_perpendicular_axis(direction, local_rng), radius, part))
        return specs

    trunk_len = rng.uniform(130.0, 160.0)
    trunk_dir = _unit(np.array([1.0, rng.normal(0, 0.15), rng.normal(0, 0.15)]))
    trunk_pts = _walk_arcs(
        np.zeros(3), trunk_dir,
        _arc_specs(trunk_dir, trunk_len, tight_branch == 0, rng),
        POINT_SPACING,
    )

    polylines: dict[int, NDArray[np.float64]] = {0: trunk_pts}
    parents: dict[int, tuple[int | None, int | None]] = {0: (None, None)}
    route_offsets: dict[int, float] = {0: 0.0}  # route arc length at each branch's start

    for b in range(1, n_branches):
        for _ in range(50):
            parent = int(rng.choice(sorted(polylines)))
            ppts = polylines[parent]
            j = int(rng.integers(int(0.25 * len(ppts)), int(0.85 * len(ppts))))
            offset = route_offsets[parent] + float(cumulative_arc_length(ppts)[j])
            budget = 215.0 - offset
            if budget >= 35.0:
                break
        else:
            raise InvalidArgument("could not place a branch within the length budget")
        length = float(min(rng.uniform(50.0, 110.0), budget))
        tangent = _unit(ppts[min(j + 1, len(ppts) - 1)] - ppts[max(j - 1, 0)])
        branch_dir = rotation_from_axis_angle(
            _perpendicular_axis(tangent, rng), np.radians(rng.uniform(35.0, 65.0))
        ) @ tangent
        pts = _walk_arcs(
            ppts[j], branch_dir,
            _arc_specs(branch_dir, length, tight_branch == b, rng),
            POINT_SPACING,
        )
        polylines[b] = pts
        parents[b] = (parent, j)
        route_offsets[b] = offset

    # Rescale about the inlet if the bounding box outgrew the phantom scale.
    all_pts = np.vstack(list(polylines.values()))
    extent = float(np.max(all_pts.max(axis=0) - all_pts.min(axis=0)))
    if extent > 218.0:
        factor = 218.0 / extent
        polylines = {b: pts * factor for b, pts in polylines.items()}

    radii: dict[int, NDArray[np.float64]] = {}
    radii[0] = _taper(RADIUS_MAX, rng.uniform(4.5, 5.5), len(polylines[0]), rng)
    for b in range(1, n_branches):
        parent, j = parents[b]
        start = float(np.clip(radii[parent][j] * rng.uniform(0.75, 0.9), RADIUS_MIN, RADIUS_MAX))
        end = max(RADIUS_MIN, start * rng.uniform(0.45, 0.6))
        radii[b] = _taper(start, end, len(polylines[b]), rng)

    # Dip only a branch whose mid-section sits well above the radius floor,
    # so the stenosis stays visible after clipping; the trunk always does.
    wide_enough = [
        b for b in range(n_branches)
        if np.min(radii[b][len(radii[b]) // 4: 3 * len(radii[b]) // 4]) >= 4.0
    ] or [0]
    stenosis_branch = int(rng.choice(wide_enough))
    radii[stenosis_branch] = _apply_stenosis(radii[stenosis_branch], rng)

    branches = tuple(
        Branch(
            id=b,
            centerline=Path3(polylines[b], frame=Frame.PREOP),
            radii=radii[b],
            parent_id=parents[b][0],
            junction_index=parents[b][1],
        )
        for b in range(n_branches)
    )
    return PhantomModel(branches=branches, inlet_index=0)


def route_to_outlet(phantom: PhantomModel, branch_id: int) -> Branch:
    """Inlet-to-outlet centerline for a branch, following its parent chain.

    Mirrors a pullback run: the catheter traverses the trunk and every
    intermediate branch before reaching the target branch's outlet. Returned
    as a parentless Branch so it can feed the acquisition simulator directly.
    """
    chain = [phantom.branch(branch_id)]
    while chain[0].parent_id is not None:
        chain.insert(0, phantom.branch(chain[0].parent_id))

    point_parts = []
    radius_parts = []
    for k, branch in enumerate(chain):
        pts = branch.centerline.points
        rad = branch.radii
        if k + 1 < len(chain):
            stop = chain[k + 1].junction_index + 1
            pts, rad = pts[:stop], rad[:stop]
        if k > 0:  # junction point already contributed by the parent
            pts, rad = pts[1:], rad[1:]
        point_parts.append(pts)
        radius_parts.append(rad)

    return Branch(
        id=branch_id,
        centerline=Path3(np.vstack(point_parts), frame=Frame.PREOP),
        radii=np.concatenate(radius_parts),
    )


def simulate_em_path(
    branch: Branch,
    cfg: AcquisitionConfig,
    gt_transform: RigidTransform,
) -> tuple[Path3, RigidTransform]:
    """Simulate a pullback along a branch centerline, placed in the EM frame.

    Positions are sampled inlet-to-outlet at arc-length increments of
    pull_speed / sample_rate, optionally perturbed by isotropic Gaussian
    noise, thinned by dropout, and interrupted by short backward excursions;
    finally every point is mapped by ``gt_transform``. Deterministic in
    ``cfg.seed``.
    """
    if len(branch.centerline) < 2:
        raise DegenerateInput("branch centerline needs at least 2 points")
    rng = np.random.default_rng(cfg.seed)
    speed = cfg.pull_speed if cfg.pull_speed is not None else float(rng.uniform(10.0, 20.0))
    ds = speed / cfg.sample_rate

    pts = branch.centerline.points
    cum = cumulative_arc_length(pts)
    total = float(cum[-1])

    s_values = []
    s = 0.0
    while s <= total + 1e-9:
        s_values.append(min(s, total))
        if cfg.backward_jitter_prob > 0 and rng.random() < cfg.backward_jitter_prob:
            for _ in range(int(rng.integers(2, 6))):
                s = max(0.0, s - ds)
                s_values.append(s)
        s += ds
    s_arr = np.asarray(s_values)

    positions = np.column_stack([np.interp(s_arr, cum, pts[:, k]) for k in range(3)])
    if cfg.noise_sigma > 0:
        positions = positions + rng.normal(0.0, cfg.noise_sigma, positions.shape)

    keep = np.ones(len(positions), dtype=bool)
    if cfg.dropout_prob > 0:
        keep = rng.random(len(positions)) >= cfg.dropout_prob
        if not keep.any():
            keep[0] = True

    timestamps = np.flatnonzero(keep) / cfg.sample_rate
    em_points = gt_transform.apply_points(positions[keep])
    return Path3(em_points, frame=Frame.EM, timestamps=timestamps), gt_transform
