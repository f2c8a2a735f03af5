"""Pydantic request/response models for the registration service."""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..dtw import CorrespondenceSet
from ..geometry import Frame, Path3, RigidTransform
from ..registration import RegistrationResult

FrameName = Literal["preop", "em", "intraop"]


class PathPayload(BaseModel):
    points: list[list[float]] = Field(..., description="ordered [x, y, z] samples in mm")
    frame: FrameName = "em"
    timestamps: Optional[list[float]] = None

    def to_path(self) -> Path3:
        ts = None if self.timestamps is None else np.asarray(self.timestamps)
        return Path3(np.asarray(self.points, dtype=np.float64), Frame(self.frame), ts)

    @classmethod
    def from_path(cls, path: Path3) -> "PathPayload":
        return cls(
            points=path.points.tolist(),
            frame=path.frame.value,
            timestamps=None if path.timestamps is None else path.timestamps.tolist(),
        )


class TransformPayload(BaseModel):
    rotation: list[list[float]] = Field(..., description="row-major 3x3 rotation")
    translation: list[float]
    frame_from: FrameName = "em"
    frame_to: FrameName = "intraop"

    def to_transform(self) -> RigidTransform:
        return RigidTransform(
            np.asarray(self.rotation, dtype=np.float64),
            np.asarray(self.translation, dtype=np.float64),
        )

    @classmethod
    def from_transform(
        cls, transform: RigidTransform, frame_from: str = "em", frame_to: str = "intraop"
    ) -> "TransformPayload":
        return cls(
            rotation=transform.rotation.tolist(),
            translation=transform.translation.tolist(),
            frame_from=frame_from,
            frame_to=frame_to,
        )


class CorrespondencePayload(BaseModel):
    centerline_index: int
    em_index: int
    centerline_point: list[float]
    em_point: list[float]
    pair_cost: float
    segment: int


class RegistrationResponse(BaseModel):
    method: str
    converged: bool
    transform: TransformPayload
    fit_rmse_mm: float
    iterations: Optional[int] = None
    warnings: list[str] = []
    correspondences: list[CorrespondencePayload] = []

    @classmethod
    def from_result(cls, result: RegistrationResult, converged: bool = True) -> "RegistrationResponse":
        return cls(
            method=result.method.value,
            converged=converged,
            transform=TransformPayload.from_transform(result.transform),
            fit_rmse_mm=result.fit_rmse,
            iterations=result.iterations,
            warnings=list(result.diagnostics),
            correspondences=[
                CorrespondencePayload(**pair) for pair in _correspondence_dicts(result.correspondences)
            ],
        )


def _correspondence_dicts(corr: CorrespondenceSet) -> list[dict]:
    return corr.to_dict()["pairs"]


class DtwRegisterRequest(BaseModel):
    em_path: PathPayload
    centerline: PathPayload
    per_segment: int = 10
    band_radius: Optional[int] = None
    resample_target: Optional[int] = None


class IcpRegisterRequest(BaseModel):
    em_path: PathPayload
    centerline: PathPayload
    init: Optional[TransformPayload] = None
    max_iterations: int = 50
    rel_tolerance: float = 1e-6
    max_nn_distance: Optional[float] = None
    divergence_threshold: float = 250.0


class LandmarkRegisterRequest(BaseModel):
    preop_landmarks: list[list[float]]
    em_landmarks: list[list[float]]


class PhantomRequest(BaseModel):
    n_branches: int = 6
    seed: int = 0


class AcquisitionPayload(BaseModel):
    pull_speed: Optional[float] = None
    sample_rate: float = 40.0
    noise_sigma: float = 0.5
    dropout_prob: float = 0.0
    backward_jitter_prob: float = 0.0
    seed: int = 0


class SimulatePathRequest(BaseModel):
    phantom: dict
    branch_id: int
    acquisition: AcquisitionPayload = AcquisitionPayload()
    gt_transform: Optional[TransformPayload] = None
    full_route: bool = True


class SimulatePathResponse(BaseModel):
    path: PathPayload
    gt_transform: TransformPayload


class SamplerPayload(BaseModel):
    max_rotation_deg: float = 30.0
    max_translation_mm: float = 100.0
    min_translation_mm: float = 0.0


class EvaluateRequest(BaseModel):
    phantom: dict
    runs_per_branch: int = 5
    methods: list[str] = ["dtw", "icp-from-dtw"]
    acquisition: AcquisitionPayload = AcquisitionPayload()
    transform_sampler: SamplerPayload = SamplerPayload()
    master_seed: int = 0


class HealthResponse(BaseModel):
    status: str
    version: str
