"""Command-line driver: simulation runs, convergence studies, property checks, mesh inspection.

Exit codes: 0 success, 1 solver or verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import SolverError, write_matrix_market
from .cahn_hilliard import (
    CahnHilliardSolver,
    InitialCondition,
    NewtonError,
    NewtonOptions,
    ProblemConfig,
    project_initial,
)
from .exact import ManufacturedSolution
from .hho import HHOSpace
from .mesh import MeshError, generate_family, load_mesh, quality_metrics, subtriangulate
from .verification import InsufficientLevelsError, compute_errors, convergence_study, failed_checks, property_suite
from .vtk import write_vtk

log = logging.getLogger("hhoch")

OUTPUT_ENV = "HHOCH_OUTPUT_DIR"
SUPPORTED_K = (0, 1, 2)


class UsageError(Exception):
    """Bad command line or configuration (exit code 2)."""


# ------------------------------------------------------------------ configs


def builtin_configs() -> list:
    return sorted(p.name[:-5] for p in resources.files("hhoch.configs").iterdir() if p.name.endswith(".json"))


def load_config(source: str) -> dict:
    """Read a JSON config from a path, or a bundled config by name.

    A run manifest is accepted too: its resolved config is used.
    """
    path = Path(source)
    if path.exists():
        text = path.read_text()
    elif source in builtin_configs():
        text = resources.files("hhoch.configs").joinpath(f"{source}.json").read_text()
    else:
        raise FileNotFoundError(f"config not found: {source}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{source}: invalid JSON ({exc})") from None
    if "config" in cfg and "timings" in cfg:
        cfg = cfg["config"]
    return cfg


def check_k(k) -> int:
    if int(k) not in SUPPORTED_K:
        raise UsageError(f"k={k} is outside the implemented range {SUPPORTED_K}")
    return int(k)


def build_mesh_from(spec: dict):
    """Mesh from {"path": ..., "format": ...} or {"generator": kind, "n": n}."""
    if "path" in spec:
        return load_mesh(spec["path"], spec.get("format"))
    if "generator" in spec:
        return generate_family(spec["generator"], [spec.get("n", 8)])[0]
    raise UsageError("mesh section needs either 'path' or 'generator'")


def build_initial(spec: dict, seed: int, gamma: float):
    kind = spec.get("kind")
    if kind == "ellipse":
        return InitialCondition.ellipse(zero_mean=spec.get("zero_mean", False))
    if kind == "cross":
        return InitialCondition.cross(zero_mean=spec.get("zero_mean", False))
    if kind == "random":
        return InitialCondition.random_partition(spec.get("cells", 32), seed, spec.get("low", -1.0), spec.get("high", 1.0))
    if kind == "manufactured":
        exact = ManufacturedSolution(gamma, tuple(spec.get("profile", (0.0, 1.0))))
        return InitialCondition.analytic(lambda x: exact.c(x, 0.0), lambda x: exact.laplacian_c(x, 0.0), "manufactured")
    raise UsageError(f"unknown initial condition kind {kind!r}")


@contextmanager
def timed(timings: dict, phase: str):
    t0 = time.perf_counter()
    yield
    timings[phase] = timings.get(phase, 0.0) + time.perf_counter() - t0


def output_dir(args, cfg: dict) -> Path:
    base = args.out or cfg.get("output") or os.environ.get(OUTPUT_ENV) or "output"
    out = Path(base)
    if not (args.out or cfg.get("output")):
        out = out / cfg.get("name", "run")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


# -------------------------------------------------------------------- run


def resolve_run_config(cfg: dict, args) -> dict:
    cfg = json.loads(json.dumps(cfg))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "t_final", None) is not None:
        cfg["t_final"] = args.t_final
    cfg.setdefault("seed", 0)
    cfg.setdefault("scheme", "BE")
    cfg.setdefault("snapshot_times", [])
    for key in ("mesh", "k", "gamma", "tau", "t_final", "initial"):
        if key not in cfg:
            raise UsageError(f"config is missing required key {key!r}")
    check_k(cfg["k"])
    return cfg


def cmd_run(args) -> int:
    cfg = resolve_run_config(load_config(args.config), args)
    timings: dict = {}
    with timed(timings, "mesh"):
        mesh = build_mesh_from(cfg["mesh"])
    out = output_dir(args, cfg)
    with timed(timings, "space"):
        space = HHOSpace(mesh, cfg["k"], workers=args.workers)
    newton = NewtonOptions(**cfg.get("newton", {}))
    source = None
    exact = None
    if cfg["initial"].get("kind") == "manufactured":
        exact = ManufacturedSolution(cfg["gamma"], tuple(cfg["initial"].get("profile", (0.0, 1.0))))
        source = exact.source
    try:
        problem = ProblemConfig(cfg["gamma"], cfg["t_final"], cfg["tau"], cfg["k"], cfg["scheme"], newton, source)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ic = build_initial(cfg["initial"], int(cfg["seed"]), cfg["gamma"])
    solver = CahnHilliardSolver(space, problem)
    snap_steps = {int(round(t / problem.tau)): t for t in cfg["snapshot_times"] if t <= problem.t_final * (1 + 1e-12)}

    def snapshot(state):
        if state.n in snap_steps:
            with timed(timings, "output"):
                write_vtk(out / f"snapshot_{state.n:07d}.vtk", space, {"c": state.c, "w": state.w}, state.t, cfg.get("name", "run"))

    with timed(timings, "solve"):
        c0 = project_initial(ic, space)
        state = solver.initial_state(c0, ic.laplacian if ic.kind == "analytic" else None)
        monitors = [solver.monitor(state)]
        snapshot(state)
        for _ in range(problem.n_steps):
            state, rec = solver.advance(state)
            monitors.append(rec)
            snapshot(state)
            if args.verbose:
                print(f"step {rec['step']} t={rec['time']:.6g} energy={rec['energy']:.8e} newton={rec['newton_iterations']}")
            if cfg.get("dump_matrix") and state.n == 1:
                x = solver.join(state.c, state.w, state.multiplier)
                write_matrix_market(out / "jacobian.mtx", solver.jacobian(x, [state.c]))
    with timed(timings, "output"):
        with open(out / "monitors.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(monitors[0]))
            writer.writeheader()
            writer.writerows(monitors)
        summary = {}
        if exact is not None:
            c_ex, w_ex = exact.at(state.t)
            summary = compute_errors(space, state.c, state.w, c_ex, w_ex, problem.tau).errors()
        manifest = {
            "config": cfg,
            "mesh": dict(mesh.provenance),
            "seed": int(cfg["seed"]),
            "version": __version__,
            "workers": args.workers,
            "timings": {},
            "final": monitors[-1],
            "errors": summary,
        }
    manifest["timings"] = timings
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    last = monitors[-1]
    print(f"{cfg.get('name', 'run')}: {problem.n_steps} steps, t={last['time']:.6g}, mass={last['mass']:.10g}, energy={last['energy']:.8e}; output in {out}")
    return 0


# ------------------------------------------------------------ convergence


def cmd_convergence(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    k = check_k(args.k if args.k is not None else cfg.get("k", 0))
    family = args.family or cfg.get("family", "cartesian")
    levels = args.levels or cfg.get("levels", [4, 8, 16, 32])
    exact = ManufacturedSolution(cfg.get("gamma", 1.0), tuple(cfg.get("profile", (0.0, 1.0))))
    try:
        meshes = generate_family(family, levels)
        report = convergence_study(
            meshes, k, exact, cfg.get("t_final", 1.0), cfg.get("tau", 0.1), cfg.get("scheme", "BE"), family, args.workers
        )
    except InsufficientLevelsError as exc:
        raise UsageError(str(exc)) from None
    print(f"manufactured case, k={k}, {family} family")
    print(report.format_table())
    if args.out or cfg.get("output"):
        out = output_dir(args, cfg)
        report.to_json(out / "convergence.json")
        report.to_csv(out / "convergence.csv")
    return 0


# ----------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    k = check_k(args.k if args.k is not None else cfg.get("k", 0))
    family = args.family or cfg.get("family", "cartesian")
    levels = args.levels if args.levels is not None else cfg.get("levels", [8, 16, 32])
    if not levels:
        raise UsageError("the mesh family is empty")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    report = property_suite(
        generate_family(family, levels),
        k,
        seed=seed,
        family_name=family,
        stab_sign=-1.0 if args.flip_stabilization else 1.0,
        workers=args.workers,
        inequalities=cfg.get("inequalities", True),
    )
    for p in report["properties"]:
        vals = " ".join(f"{v:.4g}" for v in p["per_level"])
        print(f"{p['verdict'].upper():4}  {p['name']:<34} {vals}")
    if args.out or cfg.get("output"):
        out = output_dir(args, cfg)
        with open(out / "properties.json", "w") as fh:
            json.dump(report, fh, indent=2)
    failed = failed_checks(report)
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# -------------------------------------------------------------- mesh-info


def cmd_mesh_info(args) -> int:
    if args.mesh:
        mesh = load_mesh(args.mesh, args.format)
    elif args.generator:
        mesh = generate_family(args.generator, [args.n])[0]
    else:
        raise UsageError("mesh-info needs a mesh file or --generator")
    report = quality_metrics(mesh, subtriangulate(mesh))
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
    else:
        for key, val in report.as_dict().items():
            print(f"{key:>20}: {val}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hhoch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or bundled config name")
    common.add_argument("--workers", type=int, default=1, help="threads for element loops")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help=f"output directory (default: ${OUTPUT_ENV} or ./output)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a simulation from a config")
    run.add_argument("--t-final", type=float, default=None, help="override the final time")
    run.set_defaults(func=cmd_run)

    conv = sub.add_parser("convergence", parents=[common], help="manufactured convergence study")
    conv.add_argument("--k", type=int, default=None)
    conv.add_argument("--family", choices=["cartesian", "triangular", "hexagonal"], default=None)
    conv.add_argument("--levels", type=int, nargs="+", default=None)
    conv.set_defaults(func=cmd_convergence)

    ver = sub.add_parser("verify", parents=[common], help="discrete functional-analysis checks")
    ver.add_argument("--k", type=int, default=None)
    ver.add_argument("--family", choices=["cartesian", "triangular", "hexagonal"], default=None)
    ver.add_argument("--levels", type=int, nargs="*", default=None)
    ver.add_argument("--flip-stabilization", action="store_true", help="debug: negate the stabilization")
    ver.set_defaults(func=cmd_verify)

    info = sub.add_parser("mesh-info", help="print mesh quality metrics")
    info.add_argument("mesh", nargs="?", help="mesh file (FVCA5 text or JSON)")
    info.add_argument("--format", choices=["fvca5", "json"], default=None)
    info.add_argument("--generator", choices=["cartesian", "triangular", "hexagonal"], default=None)
    info.add_argument("--n", type=int, default=1)
    info.add_argument("--json", action="store_true")
    info.set_defaults(func=cmd_mesh_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING)
    if args.command == "run" and not args.config:
        parser.error("run needs --config")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, MeshError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NewtonError, SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
