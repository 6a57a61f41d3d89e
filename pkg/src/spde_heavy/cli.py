"""Command-line front end: ``spde-heavy {analyze-kernel,sample,solve,study}``.

Exit codes: 0 success, 2 configuration or admissibility rejection, 3 solver
failure (non-convergence, quadrature), 4 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from ._validation import check_int, check_seed
from .config import RunConfig, build_kernel, build_noise, build_problem, load_config, solve_options, stopping
from .estimators import (
    EnsembleConfig,
    moment_growth_check,
    picard_decay_study,
    stopping_time_study,
    truncation_convergence_study,
)
from .exceptions import ConfigError, ConvergenceError, GuardBandError, InsufficientLevelError, QuadratureError
from .kernels import kernel_lp_norm, q_threshold
from .noise import realization_seed, sample_noise
from .solver import auto_levels, glue, problem_initial_field, solve

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
STUDIES = ("truncation", "picard", "moment", "stopping")

logger = logging.getLogger("spde_heavy")


def _setup_logging() -> None:
    level = os.environ.get("SPDE_HEAVY_LOG", "WARNING").strip().upper()
    numeric = int(level) if level.isdigit() else getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=numeric, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write_manifest(rc: RunConfig, files: list[Path]) -> Path:
    manifest = {
        "tool": "spde-heavy",
        "version": f"v{__version__}",
        **rc.echo(),
        "files": {p.name: sio.sha256(p) for p in sorted(files)},
    }
    return sio.write_json(rc.out / "manifest.json", manifest)


# --------------------------------------------------------------------------- commands

def cmd_analyze_kernel(rc: RunConfig) -> list[Path]:
    kernel = build_kernel(rc)
    sec = rc.section("analyze")
    n_p = check_int("analyze.p_points", sec.get("p_points", 59), minimum=1)
    T = float(sec.get("T", 1.0))
    grid = np.linspace(0.0, kernel.p_max, n_p + 2)[1:-1]
    rows = []
    for p in grid:
        thr = q_threshold(p, kernel.rho, kernel.tau, kernel.dim)
        denom = 1.0 + kernel.tau * (1.0 - p)
        thr_inf = p / denom if denom > 0 else float("inf")
        rows.append((float(p), float(thr), float(p), float(thr_inf), thr < p, float(kernel_lp_norm(kernel, p, T))))
    table = sio.write_rows_csv(rc.out / "region.csv",
                               ["p", "q_threshold", "q_upper", "q_threshold_dim_limit", "nonempty", "kernel_lp_norm"],
                               [(*r[:4], str(r[4]).lower(), r[5]) for r in rows])
    summary = sio.write_json(rc.out / "kernel.json", {
        "kernel": kernel.to_dict(), "norm_const": kernel.norm_const, "p_max": kernel.p_max, "T": T,
    })
    return [table, summary]


def cmd_sample(rc: RunConfig) -> list[Path]:
    sec = rc.section("sample")
    prob = rc.section("problem")
    dim = rc.section("kernel").get("dim", 1)
    spec = build_noise(rc, declare="exponents" in rc.data)
    T = sec.get("T", prob.get("T"))
    R = sec.get("R", prob.get("R_noise", prob.get("R_eval")))
    if T is None or R is None:
        raise ConfigError("sampling needs sample.T and sample.R (or problem.T and problem.R_noise)")
    n = check_int("sample.n_realizations", sec.get("n_realizations", 1), minimum=1)
    files = []
    seeds = []
    for i in range(n):
        seed = realization_seed(rc.master_seed, i)
        real = sample_noise(spec, (T, R), seed, dim)
        files.extend(sio.write_atoms(rc.out / f"atoms_{i:04d}.csv", real))
        seeds.append({"index": i, "seed": seed, "file": f"atoms_{i:04d}.csv", "n_atoms": len(real)})
    files.append(sio.write_json(rc.out / "realizations.json", {"realizations": seeds}))
    return files


def cmd_solve(rc: RunConfig) -> list[Path]:
    problem = build_problem(rc)
    opts = solve_options(rc)
    if opts["atoms"]:
        real = sio.read_atoms(opts["atoms"])
    else:
        real = sample_noise(problem.noise, problem.box, realization_seed(rc.master_seed, 0), problem.dim)
    eta = problem.exponents.eta
    levels = opts["levels"]
    if levels is not None:
        if levels == "auto":
            levels = auto_levels(real, opts["N"] or 1, eta)
        field, info = glue(problem, real, levels, eta, opts["tol"], opts["max_iter"])
        diagnostics = {"mode": "glue", **info}
    else:
        cfg = stopping(rc, opts["N"]) if opts["N"] is not None else None
        field, diag = solve(problem, real, cfg, opts["tol"], opts["max_iter"])
        diagnostics = {"mode": "solve", **diag.to_dict()}
    view = field.restrict(problem.R_eval)
    files = [
        sio.write_field_csv(rc.out / "field.csv", view),
        sio.write_field_binary(rc.out / "field.spdh", view),
        sio.write_field_csv(rc.out / "initial_field.csv", problem_initial_field(problem).restrict(problem.R_eval)),
        *sio.write_atoms(rc.out / "atoms.csv", real),
    ]
    diagnostics.update(guard_mass_bound=problem.guard_mass_bound(), R_noise=problem.R_noise,
                       R_eval=problem.R_eval)
    files.append(sio.write_json(rc.out / "diagnostics.json", diagnostics))
    return files


def cmd_study(rc: RunConfig, kind: str | None) -> list[Path]:
    sec = rc.section("study")
    kind = kind or sec.get("kind")
    if kind not in STUDIES:
        raise ConfigError(f"study kind must be one of {', '.join(STUDIES)}, got {kind!r}")
    problem = build_problem(rc)
    ens_sec = rc.section("ensemble")
    n = sec.get("n_realizations", ens_sec.get("n_realizations", 256))
    ens = EnsembleConfig(problem, n, rc.master_seed, rc.workers)
    cfg = stopping(rc, sec.get("N", 1))
    if kind == "truncation":
        report = truncation_convergence_study(ens, cfg, sec.get("mode", "jump-size"),
                                              sec.get("L_grid", [1, 2, 4, 8, 16, 32, 64]),
                                              sec.get("tol", 1e-6), sec.get("max_iter", 50))
    elif kind == "picard":
        report = picard_decay_study(ens, cfg, sec.get("n_max", 25), sec.get("tol", 1e-6))
    elif kind == "moment":
        R = problem.R_eval
        report = moment_growth_check(ens, cfg, sec.get("R_ladder", [R / 4, R / 2, 3 * R / 4, R]),
                                     sec.get("slack", 0.25))
    else:
        report = stopping_time_study(problem.noise, sec.get("levels", [1, 2, 4, 8, 16]), problem.exponents.eta,
                                     problem.box, problem.dim, n, rc.master_seed, problem.exponents.q,
                                     rc.workers)
    return list(sio.write_report(rc.out, report))


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, default=1, help="concurrent realizations")
    parser = argparse.ArgumentParser(prog="spde-heavy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze-kernel", parents=[common], help="admissible (p, q) region and kernel norms")
    sub.add_parser("sample", parents=[common], help="draw atom clouds")
    sub.add_parser("solve", parents=[common], help="solve one realization")
    st = sub.add_parser("study", parents=[common], help="ensemble study")
    st.add_argument("kind", nargs="?", choices=STUDIES)
    return parser


def _run(args) -> list[Path]:
    data = load_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else data.get("ensemble", {}).get("master_seed", 0)
    rc = RunConfig(args.command, data, args.out, check_seed(seed), check_int("workers", args.workers, minimum=1))
    rc.out.mkdir(parents=True, exist_ok=True)
    if args.command == "analyze-kernel":
        files = cmd_analyze_kernel(rc)
    elif args.command == "sample":
        files = cmd_sample(rc)
    elif args.command == "solve":
        files = cmd_solve(rc)
    else:
        files = cmd_study(rc, args.kind)
    files.append(_write_manifest(rc, files))
    return files


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        files = _run(args)
    except (ConfigError, GuardBandError, InsufficientLevelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, QuadratureError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    for f in files:
        logger.info("wrote %s", f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
