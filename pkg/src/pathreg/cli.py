"""Command-line entry point: simulate, register, evaluate, serve.

Exit codes: 0 success, 1 I/O or data failure, 2 usage error, 3 registration
non-convergence (the result JSON is still written for diagnostics). Every
simulate/evaluate run drops an ``effective_config.json`` into the output
directory; register embeds the effective configuration in its result JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path as FsPath

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from . import __version__
from .errors import NonConvergence, PathregError
from .evaluation import (
    ExperimentMethod,
    ExperimentProtocol,
    TransformSampler,
    cell_seed,
    emit_report,
    run_experiment,
    sample_ground_truth,
)
from .fileio import (
    read_path_csv,
    read_phantom_json,
    read_transform_json,
    write_path_csv,
    write_phantom_json,
    write_transform_json,
)
from .geometry import Frame, RigidTransform
from .registration import (
    DtwRegistrationConfig,
    IcpConfig,
    register_dtw,
    register_icp,
    register_landmarks,
)
from .simulation import AcquisitionConfig, generate_phantom, route_to_outlet, simulate_em_path

log = logging.getLogger("pathreg")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(f"must be in [0, 1), got {text}")
    return value


def _load_config_file(path: str) -> dict:
    file = FsPath(path)
    if file.suffix.lower() == ".toml":
        with file.open("rb") as handle:
            return tomllib.load(handle)
    return json.loads(file.read_text())


def _acquisition_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pull-speed", type=_nonnegative_float, default=None,
                        help="pull speed in mm/s (default: drawn from 10-20 per run)")
    parser.add_argument("--sample-rate", type=_nonnegative_float, default=40.0,
                        help="acquisition rate in Hz")
    parser.add_argument("--noise-sigma", type=_nonnegative_float, default=0.5,
                        help="isotropic Gaussian noise std in mm")
    parser.add_argument("--dropout", type=_probability, default=0.0,
                        help="per-sample dropout probability")
    parser.add_argument("--jitter", type=_probability, default=0.0,
                        help="backward-excursion probability per sample")


def _sampler_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-rotation-deg", type=_nonnegative_float, default=30.0)
    parser.add_argument("--max-translation-mm", type=_nonnegative_float, default=100.0)
    parser.add_argument("--min-translation-mm", type=_nonnegative_float, default=0.0)


def _acquisition_from(args: argparse.Namespace, seed: int) -> AcquisitionConfig:
    return AcquisitionConfig(
        pull_speed=args.pull_speed,
        sample_rate=args.sample_rate,
        noise_sigma=args.noise_sigma,
        dropout_prob=args.dropout,
        backward_jitter_prob=args.jitter,
        seed=seed,
    )


def _effective_config(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "verbose", "quiet"}
    return {
        key: value for key, value in sorted(vars(args).items())
        if key not in skip and not key.startswith("_")
    }


def _write_effective_config(args: argparse.Namespace, out_dir: FsPath) -> None:
    payload = dict(_effective_config(args), version=__version__)
    (out_dir / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    phantom = generate_phantom(args.branches, args.seed)
    write_phantom_json(phantom, out_dir / "phantom.json")
    sampler = TransformSampler(
        max_rotation_deg=args.max_rotation_deg,
        max_translation_mm=args.max_translation_mm,
        min_translation_mm=args.min_translation_mm,
    )
    for branch in phantom.branches:
        seed = cell_seed(args.seed, branch.id, 0)
        rng = np.random.default_rng(seed)
        gt = sample_ground_truth(sampler, rng)
        acq = _acquisition_from(args, seed=int(rng.integers(0, 2**63 - 1)))
        route = route_to_outlet(phantom, branch.id)
        path, gt = simulate_em_path(route, acq, gt)
        write_path_csv(path, out_dir / f"em_path_branch{branch.id}.csv")
        write_transform_json(gt, out_dir / f"gt_transform_branch{branch.id}.json",
                             frame_from=Frame.PREOP, frame_to=Frame.EM)
        if args.write_centerlines:
            write_path_csv(route.centerline, out_dir / f"centerline_branch{branch.id}.csv")
    _write_effective_config(args, out_dir)
    log.info("wrote phantom and %d simulated paths to %s", len(phantom.branches), out_dir)
    return 0


def cmd_register(args: argparse.Namespace) -> int:
    em_path = read_path_csv(FsPath(args.em), frame=Frame.EM)
    centerline = read_path_csv(FsPath(args.centerline), frame=Frame.PREOP)

    exit_code = 0
    if args.method == "dtw":
        cfg = DtwRegistrationConfig(
            per_segment=args.per_segment,
            band_radius=args.band_radius,
            resample_target=args.resample_target,
        )
        result = register_dtw(em_path, centerline, cfg)
        converged = True
    elif args.method == "icp":
        if args.init is not None:
            init, _, _ = read_transform_json(FsPath(args.init))
        else:
            init = RigidTransform.identity()
        cfg = IcpConfig(
            max_iterations=args.max_iterations,
            max_nn_distance=args.max_nn_distance,
        )
        try:
            result = register_icp(em_path, centerline, init, cfg)
            converged = True
        except NonConvergence as exc:
            log.error("%s", exc)
            if exc.result is None:
                raise
            result = exc.result
            converged = False
            exit_code = 3
    else:
        result = register_landmarks(centerline.points, em_path.points)
        converged = True

    payload = result.to_dict()
    payload["converged"] = converged
    payload["effective_config"] = dict(_effective_config(args), version=__version__)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.stdout:
        sys.stdout.write(text)
    else:
        FsPath(args.out).write_text(text)
        log.info("wrote %s (fit RMSE %.3f mm)", args.out, result.fit_rmse)
    return exit_code


def cmd_evaluate(args: argparse.Namespace) -> int:
    out_dir = FsPath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    phantom = read_phantom_json(FsPath(args.phantom))
    try:
        methods = tuple(ExperimentMethod(name) for name in args.methods.split(",") if name)
    except ValueError:
        raise PathregError(
            f"--methods must be a comma list of "
            f"{[m.value for m in ExperimentMethod]}, got {args.methods!r}"
        )
    protocol = ExperimentProtocol(
        runs_per_branch=args.runs,
        acquisition=_acquisition_from(args, seed=0),
        transform_sampler=TransformSampler(
            max_rotation_deg=args.max_rotation_deg,
            max_translation_mm=args.max_translation_mm,
            min_translation_mm=args.min_translation_mm,
        ),
        methods=methods,
        dtw_config=DtwRegistrationConfig(per_segment=args.per_segment),
        icp_config=IcpConfig(max_nn_distance=args.icp_nn_distance),
    )
    report = run_experiment(phantom, protocol, args.seed)
    formats = [f for f in args.formats.split(",") if f]
    written = emit_report(report, formats, out_dir, pooling=args.pooling)
    _write_effective_config(args, out_dir)
    n_failed = sum(1 for c in report.cells if not c.converged)
    log.info("evaluated %d cells (%d failed); wrote %s",
             len(report.cells), n_failed, ", ".join(str(p) for p in written))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathreg",
        description="Catheter-path to centerline registration toolkit",
    )
    parser.add_argument("--version", action="version", version=f"pathreg {__version__}")
    parser.add_argument("--config", default=None,
                        help="JSON or TOML file with flag defaults (flags override)")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    parser.add_argument("--quiet", action="store_true", help="errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a phantom and simulated EM paths")
    p_sim.add_argument("--branches", type=_positive_int, default=6)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--write-centerlines", action="store_true",
                       help="also write per-branch route centerline CSVs")
    _acquisition_args(p_sim)
    _sampler_args(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_reg = sub.add_parser("register", help="register an EM path to a centerline")
    p_reg.add_argument("--method", choices=["dtw", "icp", "landmarks"], required=True)
    p_reg.add_argument("--em", required=True, help="EM path CSV (or EM landmarks)")
    p_reg.add_argument("--centerline", required=True,
                       help="centerline CSV (or preoperative landmarks)")
    p_reg.add_argument("--init", default=None, help="initial transform JSON (icp)")
    p_reg.add_argument("--per-segment", type=_positive_int, default=10)
    p_reg.add_argument("--band-radius", type=_positive_int, default=None)
    p_reg.add_argument("--resample-target", type=_positive_int, default=None)
    p_reg.add_argument("--max-iterations", type=_positive_int, default=50)
    p_reg.add_argument("--max-nn-distance", type=_nonnegative_float, default=None)
    p_reg.add_argument("--out", default="registration.json")
    p_reg.add_argument("--stdout", action="store_true",
                       help="write the result JSON to standard output")
    p_reg.set_defaults(func=cmd_register)

    p_eval = sub.add_parser("evaluate", help="run the branch-by-branch experiment")
    p_eval.add_argument("--phantom", required=True, help="phantom JSON")
    p_eval.add_argument("--runs", type=_positive_int, default=5)
    p_eval.add_argument("--methods", default="dtw,icp-from-dtw")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--formats", default="csv,json,svg")
    p_eval.add_argument("--per-segment", type=_positive_int, default=10)
    p_eval.add_argument("--icp-nn-distance", type=_nonnegative_float, default=50.0)
    p_eval.add_argument("--pooling", choices=["per_run", "per_point"], default="per_run")
    _acquisition_args(p_eval)
    _sampler_args(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_srv = sub.add_parser("serve", help="run the HTTP service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=_positive_int, default=8000)
    p_srv.set_defaults(func=cmd_serve)

    if defaults:
        for action in parser._subparsers._group_actions:  # noqa: SLF001
            for sub_parser in action.choices.values():
                known = {a.dest for a in sub_parser._actions}  # noqa: SLF001
                sub_parser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    # Pre-scan for --config so file values become defaults the flags override.
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    pre_args, _ = pre.parse_known_args(argv)
    defaults = {}
    if pre_args.config is not None:
        try:
            defaults = {k.replace("-", "_"): v for k, v in _load_config_file(pre_args.config).items()}
        except OSError as exc:
            print(f"pathreg: cannot read config file: {exc}", file=sys.stderr)
            return 1
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            print(f"pathreg: cannot parse config file: {exc}", file=sys.stderr)
            return 1

    parser = build_parser(defaults)
    args = parser.parse_args(argv)

    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.ERROR
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")

    try:
        return args.func(args)
    except NonConvergence as exc:
        log.error("registration did not converge: %s", exc)
        return 3
    except PathregError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 1
    except json.JSONDecodeError as exc:
        log.error("invalid JSON input: %s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
