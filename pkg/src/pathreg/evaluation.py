"""Registration error metric, the branch-by-branch experiment harness, and reports.

The headline metric is the mean, over registered path points, of the distance
to the closest point of the ground-truth-registered path. It is asymmetric by
definition: swapping the arguments measures a different quantity.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, InvalidArgument, NonConvergence, PathregError
from .geometry import (
    Frame,
    Path3,
    RigidTransform,
    apply_transform,
    invert_transform,
    rotation_from_axis_angle,
)
from .registration import (
    DtwRegistrationConfig,
    IcpConfig,
    RegistrationResult,
    register_dtw,
    register_icp,
)
from .simulation import AcquisitionConfig, PhantomModel, route_to_outlet, simulate_em_path


class ExperimentMethod(enum.Enum):
    DTW = "dtw"
    ICP_FROM_DTW = "icp-from-dtw"
    ICP_FROM_IDENTITY = "icp-from-identity"


@dataclass(frozen=True)
class ErrorSummary:
    """Statistics over per-point registration errors, in millimeters."""

    mean_mm: float
    std_mm: float
    min_mm: float
    max_mm: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidArgument("summary needs at least one point")
        if not (self.min_mm <= self.mean_mm <= self.max_mm) or self.std_mm < 0:
            raise InvalidArgument("summary statistics are inconsistent")


@dataclass(frozen=True)
class TransformSampler:
    """Bounds for the random ground-truth displacement of each simulated run."""

    max_rotation_deg: float = 30.0
    max_translation_mm: float = 100.0
    min_translation_mm: float = 0.0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise InvalidArgument("max_rotation_deg must be >= 0")
        if not 0 <= self.min_translation_mm <= self.max_translation_mm:
            raise InvalidArgument("need 0 <= min_translation_mm <= max_translation_mm")


@dataclass(frozen=True)
class ExperimentProtocol:
    runs_per_branch: int = 5
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    transform_sampler: TransformSampler = field(default_factory=TransformSampler)
    methods: tuple[ExperimentMethod, ...] = (
        ExperimentMethod.DTW,
        ExperimentMethod.ICP_FROM_DTW,
    )
    dtw_config: DtwRegistrationConfig = field(default_factory=DtwRegistrationConfig)
    # The nearest-neighbor gate makes ICP report non-convergence instead of
    # silently collapsing distant signals onto each other.
    icp_config: IcpConfig = field(default_factory=lambda: IcpConfig(max_nn_distance=50.0))

    def __post_init__(self):
        if self.runs_per_branch < 1:
            raise InvalidArgument("runs_per_branch must be >= 1")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidArgument("methods must be unique")


@dataclass(frozen=True)
class CellResult:
    """One (branch, run, method) outcome of an experiment."""

    branch: int
    run: int
    method: ExperimentMethod
    error: ErrorSummary | None
    registration: RegistrationResult | None
    converged: bool
    message: str = ""
    seed: int = 0


@dataclass(frozen=True)
class ExperimentReport:
    cells: tuple[CellResult, ...]
    overall: dict[ExperimentMethod, ErrorSummary]
    protocol: ExperimentProtocol
    master_seed: int
    n_branches: int


def summarize_distances(distances) -> ErrorSummary:
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size < 1:
        raise DegenerateInput("no distances to summarize")
    return ErrorSummary(
        mean_mm=float(d.mean()),
        std_mm=float(d.std()),
        min_mm=float(d.min()),
        max_mm=float(d.max()),
        n_points=int(d.size),
    )


def mean_registration_error(registered: Path3, gt_registered: Path3) -> ErrorSummary:
    """Per-point closest distance from ``registered`` to ``gt_registered``.

    The mean is the headline registration error; min/max/std describe the
    same per-point distances. Directional: errors are measured from the
    registered path, not from the ground truth.
    """
    if len(registered) < 1 or len(gt_registered) < 1:
        raise DegenerateInput("both paths must be non-empty")
    dists, _ = cKDTree(gt_registered.points).query(registered.points)
    return summarize_distances(dists)


def sample_ground_truth(sampler: TransformSampler, rng: np.random.Generator) -> RigidTransform:
    """Random proper displacement within the sampler's rotation/translation bounds."""
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-9:
        axis = rng.normal(size=3)
    angle = np.radians(rng.uniform(0.0, sampler.max_rotation_deg))
    direction = rng.normal(size=3)
    while np.linalg.norm(direction) < 1e-9:
        direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    magnitude = rng.uniform(sampler.min_translation_mm, sampler.max_translation_mm)
    return RigidTransform(rotation_from_axis_angle(axis, angle), direction * magnitude)


def cell_seed(master_seed: int, branch: int, run: int) -> int:
    """Per-cell sub-seed: every cell is independently reproducible."""
    return master_seed + branch * 1000 + run


def run_experiment(
    phantom: PhantomModel,
    protocol: ExperimentProtocol,
    master_seed: int,
) -> ExperimentReport:
    """Run the branch-by-branch protocol against exact simulated ground truth.

    For every branch and run: sample a ground-truth displacement, simulate a
    pullback along the inlet-to-outlet route, register with each requested
    method (ICP variants are initialized from the DTW result or identity),
    and score against the path de-transformed by the true displacement.
    Method failures are recorded per cell, never fatal. Deterministic in
    ``master_seed``.
    """
    cells: list[CellResult] = []
    per_method: dict[ExperimentMethod, list[ErrorSummary]] = {m: [] for m in protocol.methods}
    need_dtw = (
        ExperimentMethod.DTW in protocol.methods
        or ExperimentMethod.ICP_FROM_DTW in protocol.methods
    )

    for branch in sorted(b.id for b in phantom.branches):
        route = route_to_outlet(phantom, branch)
        for run in range(protocol.runs_per_branch):
            seed = cell_seed(master_seed, branch, run)
            rng = np.random.default_rng(seed)
            gt = sample_ground_truth(protocol.transform_sampler, rng)
            acq = dataclasses.replace(
                protocol.acquisition, seed=int(rng.integers(0, 2**63 - 1))
            )
            em_path, _ = simulate_em_path(route, acq, gt)
            gt_registered = apply_transform(invert_transform(gt), em_path, Frame.INTRAOP)

            dtw_result: RegistrationResult | None = None
            dtw_failure = ""
            if need_dtw:
                try:
                    dtw_result = register_dtw(em_path, route.centerline, protocol.dtw_config)
                except PathregError as exc:
                    dtw_failure = f"dtw registration failed: {exc}"

            for method in protocol.methods:
                registration: RegistrationResult | None = None
                try:
                    if method is ExperimentMethod.DTW:
                        if dtw_result is None:
                            raise DegenerateInput(dtw_failure)
                        registration = dtw_result
                    elif method is ExperimentMethod.ICP_FROM_DTW:
                        if dtw_result is None:
                            raise DegenerateInput(f"no initialization: {dtw_failure}")
                        registration = register_icp(
                            em_path, route.centerline, dtw_result.transform, protocol.icp_config
                        )
                    else:
                        registration = register_icp(
                            em_path, route.centerline, RigidTransform.identity(),
                            protocol.icp_config,
                        )
                    registered = apply_transform(registration.transform, em_path, Frame.INTRAOP)
                    error = mean_registration_error(registered, gt_registered)
                    cells.append(CellResult(branch, run, method, error, registration, True, "", seed))
                    per_method[method].append(error)
                except NonConvergence as exc:
                    cells.append(
                        CellResult(branch, run, method, None, exc.result, False, str(exc), seed)
                    )
                except PathregError as exc:
                    cells.append(
                        CellResult(branch, run, method, None, registration, False, str(exc), seed)
                    )

    overall = {
        method: aggregate_summaries(summaries, mode="per_point")
        for method, summaries in per_method.items()
        if summaries
    }
    return ExperimentReport(
        cells=tuple(cells),
        overall=overall,
        protocol=protocol,
        master_seed=master_seed,
        n_branches=len(phantom.branches),
    )


def aggregate_summaries(summaries, mode: str = "per_run") -> ErrorSummary:
    """Combine per-run summaries into one.

    ``per_run`` takes statistics over the run means (the figure convention:
    bars are the std of run means, whiskers their min/max). ``per_point``
    pools the underlying per-point populations exactly, so the pooled mean is
    the point-count-weighted mean of the run means.
    """
    summaries = list(summaries)
    if not summaries:
        raise DegenerateInput("nothing to aggregate")
    n_total = int(sum(s.n_points for s in summaries))
    if mode == "per_run":
        means = np.array([s.mean_mm for s in summaries])
        return ErrorSummary(
            mean_mm=float(means.mean()),
            std_mm=float(means.std()),
            min_mm=float(means.min()),
            max_mm=float(means.max()),
            n_points=n_total,
        )
    if mode != "per_point":
        raise InvalidArgument(f"unknown aggregation mode {mode!r}")
    weights = np.array([s.n_points for s in summaries], dtype=np.float64)
    means = np.array([s.mean_mm for s in summaries])
    second_moments = np.array([s.std_mm**2 + s.mean_mm**2 for s in summaries])
    mean = float(np.sum(weights * means) / n_total)
    var = max(float(np.sum(weights * second_moments) / n_total - mean**2), 0.0)
    return ErrorSummary(
        mean_mm=mean,
        std_mm=float(np.sqrt(var)),
        min_mm=float(min(s.min_mm for s in summaries)),
        max_mm=float(max(s.max_mm for s in summaries)),
        n_points=n_total,
    )


def _protocol_dict(protocol: ExperimentProtocol) -> dict:
    return {
        "runs_per_branch": protocol.runs_per_branch,
        "acquisition": dataclasses.asdict(protocol.acquisition),
        "transform_sampler": dataclasses.asdict(protocol.transform_sampler),
        "methods": [m.value for m in protocol.methods],
        "dtw_config": dataclasses.asdict(protocol.dtw_config),
        "icp_config": dataclasses.asdict(protocol.icp_config),
    }


def report_to_dict(report: ExperimentReport) -> dict:
    cells = []
    for cell in report.cells:
        entry = {
            "branch": cell.branch,
            "run": cell.run,
            "method": cell.method.value,
            "seed": cell.seed,
            "converged": cell.converged,
            "message": cell.message,
            "error": dataclasses.asdict(cell.error) if cell.error else None,
        }
        if cell.registration is not None:
            entry["transform"] = {
                "rotation": cell.registration.transform.rotation.tolist(),
                "translation": cell.registration.transform.translation.tolist(),
            }
            entry["fit_rmse_mm"] = cell.registration.fit_rmse
            entry["iterations"] = cell.registration.iterations
        cells.append(entry)
    return {
        "master_seed": report.master_seed,
        "n_branches": report.n_branches,
        "protocol": _protocol_dict(report.protocol),
        "cells": cells,
        "overall": {
            m.value: dataclasses.asdict(s) for m, s in sorted(
                report.overall.items(), key=lambda kv: kv[0].value
            )
        },
    }


def _format_value(value: float) -> str:
    return repr(float(value))


def _csv_lines(report: ExperimentReport) -> list[str]:
    method_order = {m: k for k, m in enumerate(report.protocol.methods)}
    lines = ["branch,run,method,mean_mm,std_mm,min_mm,max_mm,n_points,converged"]
    ordered = sorted(report.cells, key=lambda c: (c.branch, c.run, method_order[c.method]))
    for cell in ordered:
        if cell.error is not None:
            stats = [
                _format_value(cell.error.mean_mm),
                _format_value(cell.error.std_mm),
                _format_value(cell.error.min_mm),
                _format_value(cell.error.max_mm),
                str(cell.error.n_points),
            ]
        else:
            stats = ["", "", "", "", "0"]
        lines.append(
            f"{cell.branch},{cell.run},{cell.method.value},"
            + ",".join(stats)
            + f",{str(cell.converged).lower()}"
        )
    for method in report.protocol.methods:
        summary = report.overall.get(method)
        if summary is None:
            lines.append(f"overall,,{method.value},,,,,0,")
        else:
            lines.append(
                f"overall,,{method.value},"
                f"{_format_value(summary.mean_mm)},{_format_value(summary.std_mm)},"
                f"{_format_value(summary.min_mm)},{_format_value(summary.max_mm)},"
                f"{summary.n_points},"
            )
    return lines


def _branch_summaries(
    report: ExperimentReport, pooling: str
) -> dict[ExperimentMethod, dict[int, ErrorSummary]]:
    out: dict[ExperimentMethod, dict[int, ErrorSummary]] = {}
    for method in report.protocol.methods:
        per_branch: dict[int, ErrorSummary] = {}
        for branch in sorted({c.branch for c in report.cells}):
            summaries = [
                c.error for c in report.cells
                if c.method is method and c.branch == branch and c.error is not None
            ]
            if summaries:
                per_branch[branch] = aggregate_summaries(summaries, mode=pooling)
        out[method] = per_branch
    return out


def _svg_text(report: ExperimentReport, pooling: str) -> str:
    """Grouped bar chart: one panel per method, a bar per branch plus overall.

    Bar height is the mean error; the thick vertical line spans +/- one
    standard deviation and the thin line the min/max whiskers.
    """
    branch_stats = _branch_summaries(report, pooling)
    branches = sorted({c.branch for c in report.cells})
    methods = list(report.protocol.methods)

    bar_w, gap, axis_w, pad = 26.0, 10.0, 46.0, 16.0
    plot_h, top, bottom = 170.0, 28.0, 34.0
    panel_w = axis_w + (len(branches) + 1) * (bar_w + gap) + pad
    width = panel_w * len(methods)
    height = top + plot_h + bottom

    peak = 1e-9
    for method in methods:
        for s in list(branch_stats[method].values()) + (
            [report.overall[method]] if method in report.overall else []
        ):
            peak = max(peak, s.max_mm, s.mean_mm + s.std_mm)
    ymax = float(np.ceil(peak * 1.1 * 2) / 2) or 0.5

    def y_of(v: float) -> float:
        return top + plot_h * (1.0 - v / ymax)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="10">'
    ]
    for p, method in enumerate(methods):
        x0 = p * panel_w
        parts.append(
            f'<text x="{x0 + panel_w / 2:.1f}" y="14" text-anchor="middle" '
            f'font-size="12">{method.value}</text>'
        )
        parts.append(
            f'<line x1="{x0 + axis_w:.1f}" y1="{top:.1f}" x2="{x0 + axis_w:.1f}" '
            f'y2="{top + plot_h:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{x0 + axis_w:.1f}" y1="{top + plot_h:.1f}" '
            f'x2="{x0 + panel_w - pad:.1f}" y2="{top + plot_h:.1f}" stroke="black"/>'
        )
        for tick in (0.0, ymax / 2, ymax):
            parts.append(
                f'<text x="{x0 + axis_w - 4:.1f}" y="{y_of(tick) + 3:.1f}" '
                f'text-anchor="end">{tick:g}</text>'
            )
        columns = [(str(b), branch_stats[method].get(b), "branch-bar") for b in branches]
        columns.append(("all", report.overall.get(method), "overall-bar"))
        for k, (label, summary, css) in enumerate(columns):
            x = x0 + axis_w + gap / 2 + k * (bar_w + gap)
            cx = x + bar_w / 2
            parts.append(
                f'<text x="{cx:.1f}" y="{top + plot_h + 14:.1f}" '
                f'text-anchor="middle">{label}</text>'
            )
            if summary is None:
                continue
            fill = "#4878a8" if css == "branch-bar" else "#a85448"
            parts.append(
                f'<rect class="{css}" x="{x:.1f}" y="{y_of(summary.mean_mm):.1f}" '
                f'width="{bar_w:.1f}" height="{top + plot_h - y_of(summary.mean_mm):.1f}" '
                f'fill="{fill}"/>'
            )
            lo, hi = summary.mean_mm - summary.std_mm, summary.mean_mm + summary.std_mm
            parts.append(
                f'<line class="std-bar" x1="{cx:.1f}" y1="{y_of(max(lo, 0)):.1f}" '
                f'x2="{cx:.1f}" y2="{y_of(hi):.1f}" stroke="black" stroke-width="2.5"/>'
            )
            parts.append(
                f'<line class="whisker" x1="{cx:.1f}" y1="{y_of(summary.min_mm):.1f}" '
                f'x2="{cx:.1f}" y2="{y_of(summary.max_mm):.1f}" stroke="black" '
                f'stroke-width="0.8"/>'
            )
            for w in (summary.min_mm, summary.max_mm):
                parts.append(
                    f'<line class="whisker-cap" x1="{cx - 5:.1f}" y1="{y_of(w):.1f}" '
                    f'x2="{cx + 5:.1f}" y2="{y_of(w):.1f}" stroke="black" stroke-width="0.8"/>'
                )
    parts.append(
        f'<text x="12" y="{top + plot_h / 2:.1f}" transform="rotate(-90 12 '
        f'{top + plot_h / 2:.1f})" text-anchor="middle">mean error (mm)</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(
    report: ExperimentReport,
    formats,
    out_dir,
    pooling: str = "per_run",
) -> list[FsPath]:
    """Write the report as report.csv / report.json / report.svg into out_dir."""
    formats = list(formats)
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise InvalidArgument(f"unknown report formats: {sorted(unknown)}")
    out_dir = FsPath(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[FsPath] = []
    if "csv" in formats:
        target = out_dir / "report.csv"
        target.write_text("\n".join(_csv_lines(report)) + "\n")
        written.append(target)
    if "json" in formats:
        target = out_dir / "report.json"
        target.write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")
        written.append(target)
    if "svg" in formats:
        target = out_dir / "report.svg"
        target.write_text(_svg_text(report, pooling) + "\n")
        written.append(target)
    return written
