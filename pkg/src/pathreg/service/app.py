"""FastAPI service exposing the registration, simulation, and evaluation pipelines.

Registration is stateless and fast, so one service instance can serve many
navigation clients; the CLI covers the same workflows for file-based use.
Data validation problems map to HTTP 422; a non-converging ICP run is a
regular response with ``converged: false``.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import NonConvergence, PathregError
from ..evaluation import (
    ExperimentMethod,
    ExperimentProtocol,
    TransformSampler,
    report_to_dict,
    run_experiment,
)
from ..fileio import phantom_from_dict, phantom_to_dict
from ..geometry import RigidTransform
from ..registration import (
    DtwRegistrationConfig,
    IcpConfig,
    register_dtw,
    register_icp,
    register_landmarks,
)
from ..simulation import AcquisitionConfig, generate_phantom, route_to_outlet, simulate_em_path
from .schemas import (
    AcquisitionPayload,
    DtwRegisterRequest,
    EvaluateRequest,
    HealthResponse,
    IcpRegisterRequest,
    LandmarkRegisterRequest,
    PathPayload,
    PhantomRequest,
    RegistrationResponse,
    SimulatePathRequest,
    SimulatePathResponse,
    TransformPayload,
)


def _acquisition(payload: AcquisitionPayload) -> AcquisitionConfig:
    return AcquisitionConfig(**payload.model_dump())


def create_app() -> FastAPI:
    app = FastAPI(title="pathreg", version=__version__)

    @app.exception_handler(PathregError)
    async def _pathreg_error(_, exc: PathregError):
        raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/register/dtw", response_model=RegistrationResponse)
    def register_dtw_endpoint(request: DtwRegisterRequest):
        cfg = DtwRegistrationConfig(
            per_segment=request.per_segment,
            band_radius=request.band_radius,
            resample_target=request.resample_target,
        )
        result = register_dtw(request.em_path.to_path(), request.centerline.to_path(), cfg)
        return RegistrationResponse.from_result(result)

    @app.post("/register/icp", response_model=RegistrationResponse)
    def register_icp_endpoint(request: IcpRegisterRequest):
        cfg = IcpConfig(
            max_iterations=request.max_iterations,
            rel_tolerance=request.rel_tolerance,
            max_nn_distance=request.max_nn_distance,
            divergence_threshold=request.divergence_threshold,
        )
        init = (
            RigidTransform.identity()
            if request.init is None
            else request.init.to_transform()
        )
        try:
            result = register_icp(
                request.em_path.to_path(), request.centerline.to_path(), init, cfg
            )
        except NonConvergence as exc:
            if exc.result is None:
                raise HTTPException(status_code=422, detail=str(exc))
            response = RegistrationResponse.from_result(exc.result, converged=False)
            response.warnings = [*response.warnings, str(exc)]
            return response
        return RegistrationResponse.from_result(result)

    @app.post("/register/landmarks", response_model=RegistrationResponse)
    def register_landmarks_endpoint(request: LandmarkRegisterRequest):
        result = register_landmarks(request.preop_landmarks, request.em_landmarks)
        return RegistrationResponse.from_result(result)

    @app.post("/simulate/phantom")
    def simulate_phantom_endpoint(request: PhantomRequest):
        return phantom_to_dict(generate_phantom(request.n_branches, request.seed))

    @app.post("/simulate/path", response_model=SimulatePathResponse)
    def simulate_path_endpoint(request: SimulatePathRequest):
        phantom = phantom_from_dict(request.phantom)
        branch = (
            route_to_outlet(phantom, request.branch_id)
            if request.full_route
            else phantom.branch(request.branch_id)
        )
        gt = (
            RigidTransform.identity()
            if request.gt_transform is None
            else request.gt_transform.to_transform()
        )
        path, gt = simulate_em_path(branch, _acquisition(request.acquisition), gt)
        return SimulatePathResponse(
            path=PathPayload.from_path(path),
            gt_transform=TransformPayload.from_transform(gt),
        )

    @app.post("/evaluate")
    def evaluate_endpoint(request: EvaluateRequest):
        phantom = phantom_from_dict(request.phantom)
        try:
            methods = tuple(ExperimentMethod(name) for name in request.methods)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=f"unknown method: {exc}")
        protocol = ExperimentProtocol(
            runs_per_branch=request.runs_per_branch,
            acquisition=_acquisition(request.acquisition),
            transform_sampler=TransformSampler(**request.transform_sampler.model_dump()),
            methods=methods,
        )
        report = run_experiment(phantom, protocol, request.master_seed)
        return report_to_dict(report)

    return app


app = create_app()
