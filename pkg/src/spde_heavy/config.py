"""Run configuration: a TOML file with dotted sections, e.g. ``noise.alpha = 1.2``.

Recognised sections and keys (defaults in brackets)::

    kernel.family   heat | parabolic | custom   [heat]
    kernel.dim      1..3                        [1]
    kernel.m        parabolic order             [2]
    kernel.rho, kernel.tau, kernel.lambda       custom family only
    exponents.p, exponents.q, exponents.eta
    noise.family    stable | discrete           [stable]
    noise.alpha, noise.scale [1], noise.cutoff [0.1], noise.drift [0]
    noise.atoms, noise.rates                    discrete family only
    sigma.kind      constant | capped_abs | power_growth | linear   [capped_abs]
    sigma.c [1], sigma.cap [10], sigma.gamma, sigma.scale [1], sigma.a [1], sigma.b [0]
    problem.T, problem.R_eval, problem.R_noise [auto], problem.psi [1]
    problem.psi_s0  use a heat-kernel bump g(s0, .) as initial condition
    problem.n_times [11], problem.n_sites [81], problem.guard_tol [1e-4]
    problem.check_growth [false], problem.n_quad [auto]
    solve.N [none], solve.levels [none | list | "auto"], solve.tol [1e-6],
    solve.max_iter [50], solve.atoms [path to an atom CSV instead of sampling]
    ensemble.n_realizations [256], ensemble.master_seed [0]
    sample.n_realizations [1], sample.T, sample.R   (default: problem.T, problem.R_noise)
    study.kind      truncation | picard | moment | stopping
    study.mode, study.L_grid, study.N [1], study.n_max [25], study.R_ladder,
    study.slack [0.25], study.levels, study.n_realizations
    analyze.p_points [59], analyze.T [1]
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .kernels import ExponentPair, KernelSpec, kernel_density
from .noise import LevyMarkSpec, StoppingConfig
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, ProblemSpec, Sigma

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class RunConfig:
    command: str
    data: dict = field(default_factory=dict)
    out: Path = Path(".")
    master_seed: int = 0
    workers: int = 1

    def section(self, name: str) -> dict:
        sec = self.data.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    def echo(self) -> dict:
        """Config as recorded in the manifest (worker count deliberately omitted)."""
        return {"command": self.command, "master_seed": self.master_seed, "config": self.data}


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _get(sec: dict, key: str, default=None, required: bool = False, where: str = ""):
    if key in sec:
        return sec[key]
    if required:
        raise ConfigError(f"missing required key {where}.{key}")
    return default


def build_kernel(rc: RunConfig) -> KernelSpec:
    sec = rc.section("kernel")
    family = _get(sec, "family", "heat")
    dim = _get(sec, "dim", 1)
    if family == "heat":
        return KernelSpec.heat(dim)
    if family == "parabolic":
        return KernelSpec.parabolic(_get(sec, "m", 2), dim, _get(sec, "lambda", 0.25))
    if family == "custom":
        return KernelSpec(_get(sec, "rho", required=True, where="kernel"),
                          _get(sec, "tau", required=True, where="kernel"),
                          _get(sec, "lambda", required=True, where="kernel"), dim)
    raise ConfigError(f"unknown kernel.family {family!r}")


def build_exponents(rc: RunConfig) -> ExponentPair:
    sec = rc.section("exponents")
    return ExponentPair(_get(sec, "p", required=True, where="exponents"),
                        _get(sec, "q", required=True, where="exponents"),
                        _get(sec, "eta", required=True, where="exponents"))


def build_noise(rc: RunConfig, declare: bool = True) -> LevyMarkSpec:
    sec = rc.section("noise")
    ex = rc.section("exponents")
    p = ex.get("p") if declare else None
    q = ex.get("q") if declare else None
    family = _get(sec, "family", "stable")
    cutoff = _get(sec, "cutoff", 0.1)
    drift = _get(sec, "drift", 0.0)
    if family == "stable":
        return LevyMarkSpec.symmetric_stable(_get(sec, "alpha", required=True, where="noise"),
                                             _get(sec, "scale", 1.0), cutoff, drift, p, q)
    if family == "discrete":
        return LevyMarkSpec.discrete(_get(sec, "atoms", required=True, where="noise"),
                                     _get(sec, "rates", required=True, where="noise"), cutoff, drift, p, q)
    raise ConfigError(f"unknown noise.family {family!r}")


def build_sigma(rc: RunConfig) -> Sigma:
    sec = rc.section("sigma")
    kind = _get(sec, "kind", "capped_abs")
    if kind == "constant":
        sig = Sigma.constant(_get(sec, "c", 1.0))
    elif kind == "capped_abs":
        sig = Sigma.capped_abs(_get(sec, "cap", 10.0))
    elif kind == "power_growth":
        sig = Sigma.power_growth(_get(sec, "gamma", required=True, where="sigma"), _get(sec, "scale", 1.0))
    elif kind == "linear":
        sig = Sigma.linear(_get(sec, "a", 1.0), _get(sec, "b", 0.0))
    else:
        raise ConfigError(f"unknown sigma.kind {kind!r}")
    if "declared_gamma" in sec:
        sig = sig.with_gamma(sec["declared_gamma"])
    return sig


class _HeatBump:
    """Initial condition ``y -> g(s0, y)``."""

    def __init__(self, kernel: KernelSpec, s0: float):
        self.kernel, self.s0 = kernel, float(s0)

    def __call__(self, points):
        return kernel_density(self.kernel, self.s0, points)

    def __eq__(self, other):
        return isinstance(other, _HeatBump) and (self.kernel, self.s0) == (other.kernel, other.s0)

    def __hash__(self):
        return hash((self.kernel, self.s0))


def build_problem(rc: RunConfig) -> ProblemSpec:
    sec = rc.section("problem")
    kernel = build_kernel(rc)
    psi = _get(sec, "psi", 1.0)
    if "psi_s0" in sec:
        psi = _HeatBump(kernel, sec["psi_s0"])
    return ProblemSpec(
        kernel=kernel,
        sigma=build_sigma(rc),
        noise=build_noise(rc),
        exponents=build_exponents(rc),
        T=_get(sec, "T", required=True, where="problem"),
        R_eval=_get(sec, "R_eval", required=True, where="problem"),
        R_noise=_get(sec, "R_noise"),
        psi=psi,
        n_times=_get(sec, "n_times", 11),
        n_sites=_get(sec, "n_sites", 81),
        guard_tol=_get(sec, "guard_tol", 1e-4),
        check_growth=bool(_get(sec, "check_growth", False)),
        n_quad=_get(sec, "n_quad"),
    )


def solve_options(rc: RunConfig) -> dict:
    sec = rc.section("solve")
    return {"N": _get(sec, "N"), "levels": _get(sec, "levels"), "tol": _get(sec, "tol", DEFAULT_TOL),
            "max_iter": _get(sec, "max_iter", DEFAULT_MAX_ITER), "atoms": _get(sec, "atoms")}


def stopping(rc: RunConfig, N: int) -> StoppingConfig:
    return StoppingConfig(N, build_exponents(rc).eta)
