"""Ensemble Monte Carlo studies built on coupled per-seed solves.

Every study draws one realization per seed and reuses it for every compared
configuration, so differences between configurations are pathwise. Seeds
are derived from a master seed and results are reduced in seed order, which
keeps reports independent of the number of workers.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ._validation import check_int, check_positive, check_seed
from .exceptions import ConfigError, ConvergenceError, GridMismatchError, HypothesisViolation
from .kernels import log_picard_decay_bound
from .noise import (
    BEYOND_WINDOW,
    LevyMarkSpec,
    NoiseRealization,
    StoppingConfig,
    as_time,
    exceedance_intensity,
    realization_seed,
    restrict_support,
    sample_noise,
    shell_sum_bound,
    stopping_time,
    truncate_adaptive,
    truncate_jump_size,
)
from .solver import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    FieldGrid,
    ProblemSpec,
    picard_iterates,
    problem_initial_field,
    solve,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
N_BOOTSTRAP = 200


@dataclass(frozen=True)
class EnsembleConfig:
    problem: ProblemSpec | None
    n_realizations: int = 256
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_realizations", check_int("n_realizations", self.n_realizations, minimum=1))
        object.__setattr__(self, "master_seed", check_seed(self.master_seed))
        object.__setattr__(self, "workers", check_int("workers", self.workers, minimum=1))

    def seeds(self) -> list[int]:
        return [realization_seed(self.master_seed, i) for i in range(self.n_realizations)]

    def realization(self, seed: int) -> NoiseRealization:
        if self.problem is None:
            raise ConfigError("this study needs a problem")
        return sample_noise(self.problem.noise, self.problem.box, seed, self.problem.dim)


def run_ensemble(func: Callable[[int], Any], seeds: Sequence[int], workers: int = 1) -> list:
    """Apply ``func`` to every seed; results come back in seed order whatever ``workers`` is."""
    if workers <= 1 or len(seeds) <= 1:
        return [func(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, seeds))


# --------------------------------------------------------------------------- report

@dataclass
class StudyReport:
    study: str
    params: dict = field(default_factory=dict)
    points: list[dict] = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)

    def add_point(self, param, estimate: float, stderr: float, n: int, **extra) -> None:
        self.points.append({"param": param, "estimate": float(estimate), "stderr": float(stderr),
                            "n": int(n), **extra})

    def rows(self) -> list[tuple]:
        """Long-format ``(study, param, seed, value)`` rows, one per seed and parameter."""
        out = []
        for param, per_seed in self.traces.items():
            for seed, value in zip(self.seeds, per_seed):
                out.append((self.study, param, seed, value))
        return out

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "study": self.study, "params": self.params,
                "points": self.points, "verdicts": self.verdicts, "seeds": self.seeds,
                "traces": self.traces}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(data["study"], data["params"], data["points"], data["verdicts"],
                   data["traces"], data["seeds"])


def _jsonable(obj):
    if obj is BEYOND_WINDOW:
        return "beyond_window"
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# --------------------------------------------------------------------------- norms

def _bootstrap_stderr(samples: np.ndarray, stat: Callable[[np.ndarray], float], n_boot: int, seed: int) -> float:
    n = samples.shape[0]
    if n < 2:
        return math.nan
    rng = np.random.Generator(np.random.PCG64(seed))
    stats = np.array([stat(samples[rng.integers(0, n, n)]) for _ in range(n_boot)])
    return float(np.std(stats, ddof=1))


def lp_functional(values: np.ndarray, p: float) -> float:
    """``max_node E[|V|**p]**(1/max(p, 1))`` over the ensemble axis 0."""
    moments = np.mean(np.abs(values) ** p, axis=0)
    return float(np.max(moments) ** (1.0 / max(p, 1.0)))


def empirical_bp_norm(fields: Sequence[FieldGrid], p: float, T: float | None = None, R: float | None = None,
                      n_boot: int = N_BOOTSTRAP, seed: int = 0) -> tuple[float, float]:
    """Ensemble estimate of the local ``B^p`` norm and its bootstrap standard error.

    The ``L^p`` functional is ``E[|X|**p]**(1/max(p, 1))``, so for ``p < 1`` a
    deterministic field ``c`` gives ``|c|**p``.
    """
    p = check_positive("p", p)
    if not fields:
        raise ConfigError("empty ensemble")
    first = fields[0]
    for f in fields[1:]:
        if not f.same_grid(first):
            raise GridMismatchError("ensemble members live on different grids")
    stack = np.stack([f.restrict(R, T).values.reshape(-1) for f in fields])
    if stack.shape[1] == 0:
        raise ConfigError("no grid node inside the requested box")
    est = lp_functional(stack, p)
    err = _bootstrap_stderr(stack, lambda s: lp_functional(s, p), n_boot, seed)
    return est, err


def _stop_mask(times: np.ndarray, tau) -> np.ndarray:
    """Grid times inside the stochastic interval ``[0, tau]``."""
    return np.ones(len(times), bool) if tau is BEYOND_WINDOW else times <= as_time(tau)


# --------------------------------------------------------------------------- studies

def _abort_on(seed: int, exc: ConvergenceError):
    raise ConvergenceError(f"seed {seed}: {exc}", exc.increments) from exc


def truncation_convergence_study(ens: EnsembleConfig, cfg: StoppingConfig, mode: str, L_grid: Sequence[float],
                                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> StudyReport:
    """Coupled gaps ``Y_L - Y`` on ``[0, tau(N)] x [-R_eval, R_eval]^d``.

    ``Y`` solves with the adaptively truncated noise at level ``cfg.N``;
    ``Y_L`` solves with the same cloud cut at ``L`` (``mode="jump-size"``
    drops big marks above ``L``; ``mode="support"`` drops big atoms outside
    ``[-L, L]^d``). Both are compared at grid times ``<= tau(N)``.
    """
    if mode not in ("jump-size", "support"):
        raise ConfigError(f"mode must be 'jump-size' or 'support', got {mode!r}")
    L_grid = [check_positive("L", L) for L in L_grid]
    if not L_grid:
        raise ConfigError("L_grid is empty")
    problem = ens.problem
    cfg.validate(problem.exponents.q, problem.dim)
    cut = truncate_jump_size if mode == "jump-size" else restrict_support
    R = problem.R_eval

    def one(seed):
        real = ens.realization(seed)
        tau = stopping_time(real, cfg)
        try:
            ref, _ = solve(problem, real, cfg, tol, max_iter)
            ref = ref.restrict(R)
            keep = _stop_mask(ref.times, tau)
            gaps = []
            for L in L_grid:
                trunc = cut(real, L)
                assert trunc.seed == real.seed
                y_l, _ = solve(problem, trunc, None, tol, max_iter)
                gap = y_l.restrict(R).values - ref.values
                gap[~keep] = 0.0
                gaps.append(gap)
        except ConvergenceError as exc:
            _abort_on(seed, exc)
        relevant = real.marks[real.times < as_time(tau)]
        return gaps, float(np.max(np.abs(relevant), initial=0.0)), tau

    seeds = ens.seeds()
    results = run_ensemble(one, seeds, ens.workers)
    rep = StudyReport("truncation", {"mode": mode, "N": cfg.N, "eta": cfg.eta, "L_grid": L_grid,
                                     "p": problem.exponents.p, "T": problem.T, "R": R, "tol": tol},
                      seeds=seeds)
    p = problem.exponents.p
    per_seed = np.array([[float(np.max(np.abs(g), initial=0.0)) for g in res[0]] for res in results])
    for j, L in enumerate(L_grid):
        stack = np.stack([res[0][j].reshape(-1) for res in results])
        est = lp_functional(stack, p)
        err = _bootstrap_stderr(stack, lambda s: lp_functional(s, p), N_BOOTSTRAP, j)
        rep.add_point(L, est, err, len(seeds))
        rep.traces[f"L={L:g}"] = per_seed[:, j].tolist()
    monotone = [bool(np.all(np.diff(row) <= 0)) for row in per_seed]
    stabilised = [bool(row[-1] == 0.0) for row in per_seed]
    rep.traces["max_relevant_jump"] = [res[1] for res in results]
    rep.verdicts = {
        "monotone_every_seed": all(monotone),
        "monotone_seeds": int(sum(monotone)),
        "final_gap_zero_every_seed": all(stabilised),
        "final_gap_zero_seeds": int(sum(stabilised)),
        "n_seeds": len(seeds),
    }
    return rep


def eventually_decreasing(trace: Sequence[float], settle: int | None = None) -> bool:
    """True if the sequence never increases after index ``settle`` (default: its first half)."""
    trace = np.asarray(trace, dtype=float)
    if len(trace) < 2:
        return True
    settle = len(trace) // 2 if settle is None else settle
    ups = np.nonzero(np.diff(trace) > 0)[0]
    return bool(len(ups) == 0 or ups[-1] + 1 <= settle)


def fit_log_constant(trace: Sequence[float], problem: ProblemSpec) -> dict:
    """Fit ``log u_n ~ n log C + log B_n(C=1)`` over the strictly positive increments.

    Returns the least-squares ``C`` and the envelope ``C`` (the smallest value
    whose bound dominates every increment).
    """
    ex = problem.exponents
    pts = [(n, math.log(u) - log_picard_decay_bound(n, 1.0, ex.p, ex.q, ex.eta, problem.kernel))
           for n, u in enumerate(trace, start=1) if u > 0 and math.isfinite(u)]
    if not pts:
        return {"C_fit": None, "C_envelope": None, "n_points": 0}
    n = np.array([a for a, _ in pts], dtype=float)
    y = np.array([b for _, b in pts])
    return {"C_fit": float(math.exp(np.dot(n, y) / np.dot(n, n))),
            "C_envelope": float(math.exp(np.max(y / n))), "n_points": len(pts)}


def picard_decay_study(ens: EnsembleConfig, cfg: StoppingConfig, n_max: int = 25,
                       tol: float = DEFAULT_TOL) -> StudyReport:
    """Increments ``u^n = Y^n - Y^(n-1)`` on the evaluation box, per seed and in ensemble ``L^p``."""
    problem = ens.problem
    n_max = check_int("n_max", n_max, minimum=1)
    cfg.validate(problem.exponents.q, problem.dim)
    R = problem.R_eval
    p = problem.exponents.p

    def one(seed):
        real = truncate_adaptive(ens.realization(seed), cfg)
        prev = problem_initial_field(problem).restrict(R)
        incs = []
        with np.errstate(over="ignore", invalid="ignore"):
            for it in picard_iterates(problem, real, n_max):
                cur = it.restrict(R)
                incs.append(cur.values - prev.values)
                prev = cur
        return np.stack([u.reshape(-1) for u in incs])

    seeds = ens.seeds()
    results = run_ensemble(one, seeds, ens.workers)
    rep = StudyReport("picard", {"N": cfg.N, "eta": cfg.eta, "n_max": n_max, "p": p, "tol": tol,
                                 "T": problem.T, "R": R}, seeds=seeds)
    sup_traces = np.array([[float(np.max(np.abs(u))) for u in res] for res in results])
    for n in range(n_max):
        stack = np.stack([res[n] for res in results])
        finite = np.all(np.isfinite(stack))
        est = lp_functional(stack, p) if finite else math.inf
        err = _bootstrap_stderr(stack, lambda s: lp_functional(s, p), N_BOOTSTRAP, n) if finite else math.nan
        rep.add_point(n + 1, est, err, len(seeds))
        rep.traces[f"n={n + 1}"] = sup_traces[:, n].tolist()
    ensemble_trace = [pt["estimate"] for pt in rep.points]
    decreasing = [eventually_decreasing(row) and row[-1] < tol for row in sup_traces]
    divergent = [not np.all(np.isfinite(row)) for row in sup_traces]
    frac = float(np.mean(decreasing))
    rep.verdicts = {
        "eventually_decreasing_fraction": frac,
        "eventually_decreasing_seeds": int(sum(decreasing)),
        "n_seeds": len(seeds),
        "ensemble_eventually_decreasing": eventually_decreasing(ensemble_trace),
        "ensemble_below_tol": bool(ensemble_trace[-1] < tol),
        "divergent_seeds": int(sum(divergent)),
        "fit": fit_log_constant(ensemble_trace, problem),
    }
    if any(divergent):
        rep.verdicts["finding"] = "divergent increments: the hypotheses do not hold for this configuration"
    return rep


def moment_growth_check(ens: EnsembleConfig, cfg: StoppingConfig, R_ladder: Sequence[float],
                        slack: float = 0.25, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER) -> StudyReport:
    """Sup over nested boxes of ``E|Y(t, x) 1{t <= tau(N)}|**q``; PASS if the ladder levels off.

    The verdict compares the two largest boxes: their relative increase must
    stay below ``slack``.
    """
    problem = ens.problem
    q, p = problem.exponents.q, problem.exponents.p
    if problem.sigma.gamma is None or problem.sigma.gamma > q / p + 1e-15:
        raise HypothesisViolation(
            f"moment bound needs |sigma(x)| <= C(1 + |x|^gamma) with gamma in [0, q/p] = [0, {q / p:g}]; "
            f"sigma declares gamma={problem.sigma.gamma}"
        )
    problem.sigma.check_growth()
    R_ladder = sorted(check_positive("R", R) for R in R_ladder)
    if len(R_ladder) < 2:
        raise ConfigError("the box ladder needs at least two radii")
    if R_ladder[-1] > problem.R_eval * (1 + 1e-12):
        raise ConfigError(f"ladder radius {R_ladder[-1]:g} exceeds the evaluation box {problem.R_eval:g}")
    if ens.n_realizations < 64 and q > 0.8 * min(problem.noise.alpha or 2.0, 2.0):
        warnings.warn("q is close to the tail index; moment estimates may have large variance", RuntimeWarning)

    def one(seed):
        real = ens.realization(seed)
        try:
            y, diag = solve(problem, real, cfg, tol, max_iter)
        except ConvergenceError as exc:
            _abort_on(seed, exc)
        vals = y.values.copy()
        if diag.stopping_time is not BEYOND_WINDOW:
            vals[y.times > as_time(diag.stopping_time)] = 0.0
        return y.with_values(vals)

    seeds = ens.seeds()
    fields = run_ensemble(one, seeds, ens.workers)
    rep = StudyReport("moment", {"N": cfg.N, "eta": cfg.eta, "q": q, "R_ladder": R_ladder, "slack": slack,
                                 "gamma": problem.sigma.gamma}, seeds=seeds)
    levels = []
    for R in R_ladder:
        stack = np.stack([f.restrict(R).values.reshape(-1) for f in fields])
        stat = lambda s: float(np.max(np.mean(np.abs(s) ** q, axis=0)))  # noqa: E731
        est = stat(stack)
        rep.add_point(R, est, _bootstrap_stderr(stack, stat, N_BOOTSTRAP, int(R * 1000)), len(seeds))
        rep.traces[f"R={R:g}"] = [float(np.max(np.abs(f.restrict(R).values) ** q)) for f in fields]
        levels.append(est)
    rel = (levels[-1] - levels[-2]) / levels[-2] if levels[-2] > 0 else (0.0 if levels[-1] == 0 else math.inf)
    rep.verdicts = {"relative_increase": rel, "bounded": bool(np.isfinite(levels).all() and rel <= slack),
                    "verdict": "PASS" if np.isfinite(levels).all() and rel <= slack else "FAIL"}
    return rep


def exceedance_probability(spec: LevyMarkSpec, cfg: StoppingConfig, box: tuple[float, float], dim: int) -> float:
    """``P[tau(N) <= T]`` for the Poisson cloud: ``1 - exp(-T * int_box lambda(|z| > N h(x)) dx)``."""
    return -math.expm1(-exceedance_intensity(spec, cfg, box, dim))


def stopping_time_study(spec: LevyMarkSpec, levels: Sequence[int], eta: float, box: tuple[float, float],
                        dim: int = 1, n_realizations: int = 10_000, master_seed: int = 0, q: float | None = None,
                        workers: int = 1) -> StudyReport:
    """Empirical law of ``tau(N)`` across seeds for each level of a ladder."""
    levels = [check_int("N", N, minimum=1) for N in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must be strictly increasing")
    q = spec.declared_q if q is None else q
    if q is not None:
        StoppingConfig(levels[0], eta).validate(q, dim)
    T, R = box
    ens = EnsembleConfig(None, n_realizations, master_seed, workers)
    cfgs = [StoppingConfig(N, eta) for N in levels]

    def one(seed):
        real = sample_noise(spec, box, seed, dim)
        return [stopping_time(real, c) for c in cfgs]

    seeds = ens.seeds()
    taus = run_ensemble(one, seeds, workers)
    rep = StudyReport("stopping", {"levels": levels, "eta": eta, "T": T, "R": R, "dim": dim}, seeds=seeds)
    violations = sum(1 for row in taus for a, b in zip(row, row[1:]) if b < a)
    probs, within = [], []
    n = len(seeds)
    for j, c in enumerate(cfgs):
        hits = np.array([row[j] is not BEYOND_WINDOW and as_time(row[j]) <= T for row in taus], dtype=float)
        emp = float(hits.mean())
        exact = exceedance_probability(spec, c, box, dim)
        se = math.sqrt(max(exact * (1 - exact), 1e-300) / n)
        probs.append(emp)
        within.append(abs(emp - exact) <= 3 * se)
        rep.add_point(c.N, emp, math.sqrt(emp * (1 - emp) / n), n, bound=exact,
                      intensity=exceedance_intensity(spec, c, box, dim),
                      shell_sum=shell_sum_bound(spec, c, box, dim), within_3sigma=bool(abs(emp - exact) <= 3 * se))
        rep.traces[f"N={c.N}"] = [None if row[j] is BEYOND_WINDOW else as_time(row[j]) for row in taus]
    rep.verdicts = {
        "monotonicity_violations": violations,
        "monotone": violations == 0,
        "strictly_decreasing": bool(all(b < a for a, b in zip(probs, probs[1:]))),
        "within_3sigma_of_bound": bool(all(within)),
    }
    return rep
