"""Core 3D path types, resampling, normalization, and rigid transform algebra.

Points are float64 numpy arrays: a single point has shape (3,), a point set
shape (N, 3). All coordinates are millimeters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateGeometry, DegenerateInput, InvalidArgument

Vec3 = NDArray[np.float64]        # shape (3,)
Mat3 = NDArray[np.float64]        # shape (3, 3)
PointArray = NDArray[np.float64]  # shape (N, 3)

# Max-norm tolerance on R^T R - I and |det R - 1| for a valid rotation.
ROTATION_TOL = 1e-9

# Ratio of second-smallest to largest singular value of the centered source
# scatter below which a point set is treated as collinear.
COLLINEARITY_RATIO = 1e-8


class Frame(enum.Enum):
    """Coordinate space a path lives in."""

    PREOP = "preop"
    EM = "em"
    INTRAOP = "intraop"


def as_point_array(points, name: str = "points") -> PointArray:
    """Coerce to a finite (N, 3) float64 array, raising InvalidArgument otherwise."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidArgument(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} must contain only finite values")
    return arr


@dataclass(frozen=True)
class Path3:
    """Ordered 3D polyline in millimeters, optionally timestamped, tagged with a frame.

    Attributes
    ----------
    points : (N, 3) float64 array, N >= 1.
    frame : Frame the coordinates are expressed in.
    timestamps : optional (N,) float64 array of seconds, strictly increasing.
    """

    points: PointArray
    frame: Frame
    timestamps: NDArray[np.float64] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgument(f"path points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise DegenerateInput("path must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("path points must be finite")
        object.__setattr__(self, "points", pts)
        if not isinstance(self.frame, Frame):
            raise InvalidArgument(f"frame must be a Frame, got {self.frame!r}")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            if ts.ndim != 1 or ts.shape[0] != pts.shape[0]:
                raise InvalidArgument("timestamps must be 1-D and match the point count")
            if not np.all(np.isfinite(ts)):
                raise InvalidArgument("timestamps must be finite")
            if ts.shape[0] > 1 and not np.all(np.diff(ts) > 0):
                raise InvalidArgument("timestamps must be strictly increasing")
            object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform p -> R p + t (rotation millimeter-translation pair)."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3):
            raise InvalidArgument(f"rotation must be 3x3, got {rot.shape}")
        if tra.shape != (3,):
            raise InvalidArgument(f"translation must be a 3-vector, got {tra.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise InvalidArgument("transform entries must be finite")
        err = np.max(np.abs(rot.T @ rot - np.eye(3)))
        if err > ROTATION_TOL:
            raise InvalidArgument(f"rotation is not orthonormal (max deviation {err:.3e})")
        det = np.linalg.det(rot)
        if abs(det - 1.0) > ROTATION_TOL:
            raise InvalidArgument(f"rotation must be proper (det {det:.12f} != +1)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply_points(self, points: PointArray) -> PointArray:
        """Map an (N, 3) array through the transform."""
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class AxisAffine:
    """Per-axis scale/offset that maps normalized coordinates back to originals.

    original = scale * normalized + offset, applied axis-wise. A zero scale
    marks an axis that had no extent before normalization.
    """

    scale: Vec3
    offset: Vec3

    def __post_init__(self):
        sc = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        off = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        if sc.shape != (3,) or off.shape != (3,):
            raise InvalidArgument("scale and offset must be 3-vectors")
        if not (np.all(np.isfinite(sc)) and np.all(np.isfinite(off))):
            raise InvalidArgument("scale and offset must be finite")
        if np.any(sc < 0):
            raise InvalidArgument("scales must be non-negative")
        object.__setattr__(self, "scale", sc)
        object.__setattr__(self, "offset", off)

    def denormalize(self, points: PointArray) -> PointArray:
        """Map normalized points back to original coordinates."""
        return points * self.scale + self.offset

    def normalize(self, points: PointArray) -> PointArray:
        """Map original-coordinate points into normalized space (0 on flat axes)."""
        out = np.zeros_like(points, dtype=np.float64)
        live = self.scale > 0
        out[:, live] = (points[:, live] - self.offset[live]) / self.scale[live]
        return out


def resample_uniform(path: Path3, m: int, arc_length: bool = False) -> Path3:
    """Linearly resample a polyline to exactly ``m`` points.

    By default samples are uniform in the cumulative point-index parameter,
    which keeps the ordering of acquisition samples intact; ``arc_length=True``
    switches to uniform arc-length spacing. Endpoints are preserved exactly
    and timestamps are dropped.
    """
    if m < 2:
        raise InvalidArgument(f"resample target must be >= 2, got {m}")
    if len(path) < 2:
        raise DegenerateInput("resampling requires at least 2 points")
    pts = path.points
    if arc_length:
        xp = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))))
    else:
        xp = np.arange(len(path), dtype=np.float64)
    x = np.linspace(xp[0], xp[-1], m)
    out = np.column_stack([np.interp(x, xp, pts[:, k]) for k in range(3)])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Path3(out, frame=path.frame)


def normalize_minmax(path: Path3) -> tuple[Path3, AxisAffine]:
    """Min-max map each axis to [-1, 1] independently.

    Axes with zero extent map to the constant 0 and are recorded with scale 0.
    The returned AxisAffine undoes the map (original = scale * value + offset).
    """
    pts = path.points
    if pts.shape[0] < 1:
        raise DegenerateInput("cannot normalize an empty path")
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    span = maxs - mins
    out = np.zeros_like(pts)
    live = span > 0
    out[:, live] = 2.0 * (pts[:, live] - mins[live]) / span[live] - 1.0
    affine = AxisAffine(scale=span / 2.0, offset=(maxs + mins) / 2.0)
    return Path3(out, frame=path.frame, timestamps=path.timestamps), affine


def rigid_fit_corresponded(src, dst) -> RigidTransform:
    """Least-squares proper rigid fit for known point correspondences.

    Returns the transform minimizing sum ||R src_i + t - dst_i||^2, solved in
    closed form: centroid subtraction, SVD of the 3x3 cross-covariance, and a
    determinant-sign correction so a reflection is never returned.
    """
    src = as_point_array(src, "src")
    dst = as_point_array(dst, "dst")
    if src.shape[0] != dst.shape[0]:
        raise InvalidArgument(f"src and dst must pair up ({src.shape[0]} vs {dst.shape[0]} points)")
    if src.shape[0] < 3:
        raise DegenerateInput("rigid fit requires at least 3 point pairs")
    src_centroid = src.mean(axis=0)
    dst_centroid = dst.mean(axis=0)
    a = src - src_centroid
    b = dst - dst_centroid
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] / sv[0] < COLLINEARITY_RATIO:
        raise DegenerateGeometry("source points are collinear; rotation is not determined")
    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = dst_centroid - rotation @ src_centroid
    return RigidTransform(rotation, translation)


def apply_transform(transform: RigidTransform, path: Path3, out_frame: Frame) -> Path3:
    """Map every path point through the transform, retagging the frame."""
    return Path3(transform.apply_points(path.points), frame=out_frame, timestamps=path.timestamps)


def invert_transform(transform: RigidTransform) -> RigidTransform:
    """Inverse transform (R^T, -R^T t)."""
    rot = transform.rotation.T
    return RigidTransform(rot, -rot @ transform.translation)


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``inner`` first, then ``outer``."""
    return RigidTransform(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


def rotation_from_axis_angle(axis, angle_rad: float) -> Mat3:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise InvalidArgument("rotation axis must be non-zero")
    x, y, z = axis / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


def rotation_angle_deg(rotation: Mat3) -> float:
    """Rotation angle of a rotation matrix, in degrees."""
    cos = (np.trace(rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
