"""End-to-end registration pipelines: DTW-based, ICP baseline, and landmark fit."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .dtw import CorrespondenceSet, dtw_align, select_correspondences
from .errors import DegenerateInput, InvalidArgument, NonConvergence, PathregError
from .geometry import (
    Frame,
    Path3,
    RigidTransform,
    as_point_array,
    resample_uniform,
    normalize_minmax,
    rigid_fit_corresponded,
    rotation_angle_deg,
)


class RegMethod(enum.Enum):
    DTW = "dtw"
    ICP = "icp"
    LANDMARKS = "landmarks"


@dataclass(frozen=True)
class DtwRegistrationConfig:
    """Knobs for the DTW registration pipeline.

    ``resample_target`` of None matches the shorter signal to the longer
    one's point count; an integer resamples both signals to that count.

    ``max_refine_passes`` re-runs the normalize/warp/select/fit stages on the
    partially registered path, keeping the pose whose total warp cost is
    lowest: per-axis normalization distorts a rotated signal, so a single
    pass leaves an orientation-dependent residual that refinement removes.
    Refinement starts from identity and from the principal-axes alignments
    of the two signals, which bootstraps the warp when the initial relative
    orientation is large. Set ``max_refine_passes`` to 1 for the plain
    single-pass, identity-start pipeline.
    """

    per_segment: int = 10
    band_radius: int | None = None
    resample_target: int | None = None
    max_refine_passes: int = 8
    refine_tolerance: float = 1e-3

    def __post_init__(self):
        if self.per_segment < 1:
            raise InvalidArgument("per_segment must be >= 1")
        if self.resample_target is not None and self.resample_target < 2:
            raise InvalidArgument("resample_target must be >= 2")
        if self.max_refine_passes < 1:
            raise InvalidArgument("max_refine_passes must be >= 1")
        if self.refine_tolerance <= 0:
            raise InvalidArgument("refine_tolerance must be > 0")


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    rel_tolerance: float = 1e-6
    max_nn_distance: float | None = None
    divergence_threshold: float = 250.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if self.rel_tolerance <= 0:
            raise InvalidArgument("rel_tolerance must be > 0")
        if self.max_nn_distance is not None and self.max_nn_distance <= 0:
            raise InvalidArgument("max_nn_distance must be > 0 when set")
        if self.divergence_threshold <= 0:
            raise InvalidArgument("divergence_threshold must be > 0")


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of one registration: the transform plus fit diagnostics.

    ``fit_rmse`` is the RMS residual in millimeters over the points the fit
    used. ``iterations`` is set by ICP only; ``rmse_history`` records the
    ICP per-iteration RMSE for convergence inspection.
    """

    transform: RigidTransform
    correspondences: CorrespondenceSet
    fit_rmse: float
    method: RegMethod
    diagnostics: tuple[str, ...] = field(default=())
    iterations: int | None = None
    rmse_history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.fit_rmse < 0 or not np.isfinite(self.fit_rmse):
            raise InvalidArgument("fit_rmse must be finite and non-negative")
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))
        object.__setattr__(self, "rmse_history", tuple(self.rmse_history))

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "transform": {
                "rotation": self.transform.rotation.tolist(),
                "translation": self.transform.translation.tolist(),
                "frame_from": Frame.EM.value,
                "frame_to": Frame.INTRAOP.value,
            },
            "fit_rmse_mm": float(self.fit_rmse),
            "iterations": self.iterations,
            "warnings": list(self.diagnostics),
            "correspondences": self.correspondences.to_dict()["pairs"],
        }


def _stage(name: str):
    """Re-raise pipeline failures labeled with the stage that produced them."""

    class _StageContext:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, PathregError):
                raise type(exc)(f"{name}: {exc}") from exc
            return False

    return _StageContext()


def _principal_axes(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and right-handed principal axes (columns, descending variance)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, vectors = np.linalg.eigh(centered.T @ centered)
    vectors = vectors[:, ::-1]
    if np.linalg.det(vectors) < 0:
        vectors[:, 2] *= -1.0
    return centroid, vectors


def _pca_starts(em_points: np.ndarray, cl_points: np.ndarray) -> list[RigidTransform]:
    """Rigid poses aligning the EM principal frame onto the centerline's.

    The principal directions of two copies of the same curve coincide, so
    these poses nearly undo the relative orientation; all four proper sign
    assignments are returned since the axis polarities are ambiguous.
    """
    em_centroid, em_axes = _principal_axes(em_points)
    cl_centroid, cl_axes = _principal_axes(cl_points)
    starts = []
    for s1, s2 in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)):
        flipped = em_axes * np.array([s1, s2, s1 * s2])
        rotation = cl_axes @ flipped.T
        starts.append(RigidTransform(rotation, cl_centroid - rotation @ em_centroid))
    return starts


def register_dtw(
    em_path: Path3,
    centerline: Path3,
    cfg: DtwRegistrationConfig = DtwRegistrationConfig(),
) -> RegistrationResult:
    """Register an EM-tracked path to a centerline by warping and rigid fitting.

    Pipeline: resample the shorter signal to the longer's count (or both to
    ``cfg.resample_target``), min-max normalize each signal per axis, align
    the normalized signals with DTW, select minimum-cost correspondences from
    three equal warp segments, then solve the closed-form rigid fit from the
    EM points onto the centerline points.

    The normalize/warp/select/fit stages repeat on the registered path (from
    the identity pose and the principal-axes poses) while the total warp cost
    keeps falling; the lowest-cost pose wins. The returned transform maps the
    EM frame into the intraoperative (= preoperative) frame; correspondences
    are reported in the original (resampled, un-normalized) coordinates.
    """
    if len(em_path) < 4 or len(centerline) < 4:
        raise DegenerateInput("DTW registration requires >= 4 points per signal")

    # The centerline is resampled uniformly in arc length (it has no time
    # semantics, and the pullback advances in arc length); the EM path keeps
    # index-uniform resampling, preserving its acquisition-time ordering.
    with _stage("resample"):
        if cfg.resample_target is not None:
            target = cfg.resample_target
            cl = resample_uniform(centerline, target, arc_length=True)
            em = resample_uniform(em_path, target) if len(em_path) != target else em_path
        elif len(centerline) < len(em_path):
            cl = resample_uniform(centerline, len(em_path), arc_length=True)
            em = em_path
        elif len(em_path) < len(centerline):
            cl = resample_uniform(centerline, len(centerline), arc_length=True)
            em = resample_uniform(em_path, len(centerline))
        else:
            cl, em = centerline, em_path

    with _stage("normalize"):
        cl_norm, _ = normalize_minmax(cl)

    def evaluate(pose: RigidTransform):
        """One pipeline pass at the given pose of the EM path."""
        moved = Path3(pose.apply_points(em.points), frame=em.frame)
        with _stage("normalize"):
            em_norm, _ = normalize_minmax(moved)
        with _stage("dtw"):
            warp = dtw_align(cl_norm, em_norm, band_radius=cfg.band_radius)
        with _stage("select"):
            corr = select_correspondences(warp, cl, em, per_segment=cfg.per_segment)
        with _stage("fit"):
            fitted = rigid_fit_corresponded(corr.em_points, corr.centerline_points)
        residual = fitted.apply_points(corr.em_points) - corr.centerline_points
        rmse = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
        return warp.total_cost, fitted, corr, rmse

    starts = [RigidTransform.identity()]
    if cfg.max_refine_passes > 1:
        starts += _pca_starts(em.points, cl.points)

    best: tuple[float, RigidTransform, CorrespondenceSet, float] | None = None
    total_passes = 0
    for start in starts:
        pose = start
        local_best = np.inf
        for _ in range(cfg.max_refine_passes):
            total_passes += 1
            cost, fitted, corr, rmse = evaluate(pose)
            if cost >= local_best - 1e-12:
                break
            local_best = cost
            if best is None or cost < best[0]:
                best = (cost, fitted, corr, rmse)
            rot_delta = rotation_angle_deg(fitted.rotation @ pose.rotation.T)
            tra_delta = float(np.linalg.norm(fitted.translation - pose.translation))
            pose = fitted
            if rot_delta < cfg.refine_tolerance and tra_delta < cfg.refine_tolerance:
                break

    _, transform, corr, rmse = best
    return RegistrationResult(
        transform=transform,
        correspondences=corr,
        fit_rmse=rmse,
        method=RegMethod.DTW,
        diagnostics=corr.warnings + (f"refinement passes: {total_passes}",),
    )


def register_icp(
    em_path: Path3,
    centerline: Path3,
    init: RigidTransform,
    cfg: IcpConfig = IcpConfig(),
) -> RegistrationResult:
    """Point-to-point ICP of an EM path onto a centerline from an explicit init.

    Alternates nearest-neighbor matching (pairs beyond ``max_nn_distance``
    dropped when set) with the closed-form rigid fit until the relative RMSE
    improvement falls below ``rel_tolerance`` or ``max_iterations`` is hit.
    Raises NonConvergence, carrying the partial result, when fewer than 3
    pairs match or the final RMSE exceeds ``divergence_threshold``.
    """
    if len(em_path) < 3 or len(centerline) < 3:
        raise DegenerateInput("ICP requires >= 3 points per signal")

    em = em_path.points
    tree = cKDTree(centerline.points)
    transform = init
    history: list[float] = []
    diagnostics: list[str] = []
    rmse = np.inf
    iterations = 0

    def _partial() -> RegistrationResult:
        return RegistrationResult(
            transform=transform,
            correspondences=CorrespondenceSet.empty(),
            fit_rmse=float(rmse) if np.isfinite(rmse) else 0.0,
            method=RegMethod.ICP,
            diagnostics=tuple(diagnostics),
            iterations=iterations,
            rmse_history=tuple(history),
        )

    for iterations in range(1, cfg.max_iterations + 1):
        moved = transform.apply_points(em)
        dists, idx = tree.query(moved)
        if cfg.max_nn_distance is not None:
            mask = dists <= cfg.max_nn_distance
        else:
            mask = np.ones(len(em), dtype=bool)
        if int(mask.sum()) < 3:
            diagnostics.append(
                f"matched only {int(mask.sum())} pairs within {cfg.max_nn_distance} mm"
            )
            raise NonConvergence(
                f"ICP iteration {iterations}: fewer than 3 usable matches", result=_partial()
            )
        src = em[mask]
        dst = centerline.points[idx[mask]]
        transform = rigid_fit_corresponded(src, dst)
        residual = transform.apply_points(src) - dst
        new_rmse = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
        if history and new_rmse > history[-1] + 1e-9 and cfg.max_nn_distance is None:
            diagnostics.append(
                f"RMSE increased at iteration {iterations} "
                f"({history[-1]:.6f} -> {new_rmse:.6f})"
            )
        history.append(new_rmse)
        improvement = rmse - new_rmse
        rmse = new_rmse
        if rmse == 0.0 or (np.isfinite(improvement) and improvement < cfg.rel_tolerance * max(rmse, 1e-12)):
            break

    if rmse > cfg.divergence_threshold:
        raise NonConvergence(
            f"ICP stopped at RMSE {rmse:.2f} mm above the divergence threshold "
            f"{cfg.divergence_threshold} mm",
            result=_partial(),
        )
    return _partial()


def register_landmarks(preop_landmarks, em_landmarks) -> RegistrationResult:
    """Rigid fit over order-matched landmark pairs (EM landmarks onto preop)."""
    preop = as_point_array(preop_landmarks, "preop_landmarks")
    em = as_point_array(em_landmarks, "em_landmarks")
    if preop.shape[0] != em.shape[0]:
        raise InvalidArgument(
            f"landmark lists must pair up ({preop.shape[0]} vs {em.shape[0]})"
        )
    if preop.shape[0] < 3:
        raise DegenerateInput("landmark registration requires at least 3 pairs")
    transform = rigid_fit_corresponded(em, preop)
    residual = transform.apply_points(em) - preop
    rmse = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return RegistrationResult(
        transform=transform,
        correspondences=CorrespondenceSet.empty(),
        fit_rmse=rmse,
        method=RegMethod.LANDMARKS,
    )
