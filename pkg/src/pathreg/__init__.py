"""Registration of EM-tracked catheter paths to vessel centerlines.

Warp-based registration: two 3D paths are resampled to a common length,
normalized, aligned with dynamic time warping, and the best-matching point
pairs feed a closed-form rigid fit. Includes an ICP baseline, landmark
(marker) registration, a synthetic phantom/acquisition simulator with exact
ground truth, and an evaluation harness with CSV/JSON/SVG reports.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateGeometry,
    DegenerateInput,
    InfeasibleBand,
    InvalidArgument,
    NonConvergence,
    PathregError,
)
from .geometry import (
    AxisAffine,
    Frame,
    Path3,
    RigidTransform,
    apply_transform,
    compose,
    invert_transform,
    normalize_minmax,
    resample_uniform,
    rigid_fit_corresponded,
    rotation_angle_deg,
    rotation_from_axis_angle,
)
from .dtw import CorrespondenceSet, WarpPath, check_warp_path, dtw_align, select_correspondences
from .registration import (
    DtwRegistrationConfig,
    IcpConfig,
    RegMethod,
    RegistrationResult,
    register_dtw,
    register_icp,
    register_landmarks,
)
from .simulation import (
    AcquisitionConfig,
    Branch,
    PhantomModel,
    generate_phantom,
    route_to_outlet,
    simulate_em_path,
)
from .evaluation import (
    ErrorSummary,
    ExperimentMethod,
    ExperimentProtocol,
    ExperimentReport,
    TransformSampler,
    aggregate_summaries,
    emit_report,
    mean_registration_error,
    run_experiment,
)

__all__ = [
    "AcquisitionConfig",
    "AxisAffine",
    "Branch",
    "CorrespondenceSet",
    "DegenerateGeometry",
    "DegenerateInput",
    "DtwRegistrationConfig",
    "ErrorSummary",
    "ExperimentMethod",
    "ExperimentProtocol",
    "ExperimentReport",
    "Frame",
    "IcpConfig",
    "InfeasibleBand",
    "InvalidArgument",
    "NonConvergence",
    "Path3",
    "PathregError",
    "PhantomModel",
    "RegMethod",
    "RegistrationResult",
    "RigidTransform",
    "TransformSampler",
    "WarpPath",
    "aggregate_summaries",
    "apply_transform",
    "check_warp_path",
    "compose",
    "dtw_align",
    "emit_report",
    "generate_phantom",
    "invert_transform",
    "mean_registration_error",
    "normalize_minmax",
    "register_dtw",
    "register_icp",
    "register_landmarks",
    "resample_uniform",
    "rigid_fit_corresponded",
    "rotation_angle_deg",
    "rotation_from_axis_angle",
    "route_to_outlet",
    "run_experiment",
    "select_correspondences",
    "simulate_em_path",
]
