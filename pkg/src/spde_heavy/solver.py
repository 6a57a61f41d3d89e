"""Mild-solution construction on a space-time lattice.

The field lives on ``times x sites`` where the site lattice spans the whole
noise box ``[-R_noise, R_noise]^d``; results are trusted on the evaluation
box ``[-R_eval, R_eval]^d``, which sits a guard band inside it.

Discretisation choices (none of them come from the continuous theory):

* atoms are never snapped to the lattice; the kernel is evaluated at exact
  offsets ``(t - s, x - y)``;
* the integrand ``sigma(Y(s, y))`` at an atom reads the field at the last
  time level ``<= s`` (predictable, left endpoint) and interpolates
  multilinearly in space;
* atom sums run over atoms sorted by ``(s, y, z)`` with compensated pairwise
  summation, so results are bit-stable.

Because time level ``k`` only sees atoms strictly before ``t_k``, which in
turn only read levels ``< k``, the Picard iteration on a finite cloud reaches
its fixed point after at most ``n_times`` steps.
"""
from __future__ import annotations

import dataclasses
import functools
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammainccinv, roots_legendre
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_points, check_positive
from .exceptions import (
    ConfigError,
    ConvergenceError,
    GuardBandError,
    HypothesisViolation,
    InsufficientLevelError,
    QuadratureError,
)
from .kernels import ExponentPair, KernelSpec, radial_density
from .noise import (
    BEYOND_WINDOW,
    LevyMarkSpec,
    NoiseRealization,
    StoppingConfig,
    as_time,
    stabilization_level,
    stopping_time,
    truncate_adaptive,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50
_PLAN_CACHE_LIMIT = 40_000_000  # kernel-matrix entries kept in memory per solve


# --------------------------------------------------------------------------- sigma

def _constant(y, c):
    return np.full_like(y, c)


def _capped_abs(y, cap):
    return np.minimum(np.abs(y), cap)


def _power_growth(y, gamma, scale):
    return scale * (1.0 + np.abs(y)) ** gamma


def _linear(y, a, b):
    return a * y + b


@dataclass(frozen=True, eq=False)
class Sigma:
    """Lipschitz nonlinearity with its declared constants.

    ``growth_const`` and ``gamma`` declare ``|sigma(x)| <= C (1 + |x|**gamma)``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    growth_const: float | None = None
    gamma: float | None = None
    name: str = "custom"
    params: tuple = ()

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.func(y), dtype=float), y.shape)

    def _key(self):
        if self.name == "custom":
            return ("custom", id(self.func), self.lipschitz, self.growth_const, self.gamma)
        return (self.name, self.params, self.lipschitz, self.growth_const, self.gamma)

    def __eq__(self, other):
        return isinstance(other, Sigma) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def additive(self) -> bool:
        return self.lipschitz == 0

    @classmethod
    def constant(cls, c: float = 1.0) -> "Sigma":
        c = float(c)
        return cls(functools.partial(_constant, c=c), 0.0, abs(c), 0.0, "constant", (c,))

    @classmethod
    def capped_abs(cls, cap: float = 10.0) -> "Sigma":
        cap = check_positive("cap", cap)
        return cls(functools.partial(_capped_abs, cap=cap), 1.0, cap, 0.0, "capped_abs", (cap,))

    @classmethod
    def power_growth(cls, gamma: float, scale: float = 1.0) -> "Sigma":
        """``scale (1 + |x|)**gamma``; Lipschitz with constant ``scale*gamma`` for ``gamma <= 1``."""
        gamma = check_positive("gamma", gamma, allow_zero=True)
        if gamma > 1:
            raise ConfigError("power_growth is only globally Lipschitz for gamma <= 1")
        scale = float(scale)
        return cls(functools.partial(_power_growth, gamma=gamma, scale=scale),
                   abs(scale) * gamma, abs(scale), gamma, "power_growth", (gamma, scale))

    @classmethod
    def linear(cls, a: float = 1.0, b: float = 0.0) -> "Sigma":
        a, b = float(a), float(b)
        return cls(functools.partial(_linear, a=a, b=b), abs(a), max(abs(a), abs(b)), 1.0,
                   "linear", (a, b))

    def with_gamma(self, gamma: float) -> "Sigma":
        return dataclasses.replace(self, gamma=float(gamma))

    def check_lipschitz(self, n_pairs: int = 2000, spread: float = 50.0, seed: int = 0) -> None:
        rng = np.random.Generator(np.random.PCG64(seed))
        x = rng.uniform(-spread, spread, n_pairs)
        y = x + rng.normal(0.0, 1.0, n_pairs) * rng.choice([1e-3, 1.0, 10.0], n_pairs)
        lhs = np.abs(self(x) - self(y))
        rhs = self.lipschitz * np.abs(x - y)
        if np.any(lhs > rhs * (1 + 1e-9) + 1e-12):
            raise ConfigError(f"sigma {self.name!r} violates its declared Lipschitz constant {self.lipschitz:g}")

    def check_growth(self, n: int = 2000, spread: float = 1e4, seed: int = 1) -> None:
        if self.growth_const is None or self.gamma is None:
            raise HypothesisViolation("sigma declares no growth bound |sigma(x)| <= C(1 + |x|^gamma)")
        rng = np.random.Generator(np.random.PCG64(seed))
        x = np.concatenate([rng.uniform(-10, 10, n), rng.uniform(-spread, spread, n)])
        bound = self.growth_const * (1.0 + np.abs(x) ** self.gamma)
        if np.any(np.abs(self(x)) > bound * (1 + 1e-9)):
            raise ConfigError(f"sigma {self.name!r} violates its declared growth bound")

    def to_dict(self) -> dict:
        return {"name": self.name, "params": list(self.params), "lipschitz": self.lipschitz,
                "growth_const": self.growth_const, "gamma": self.gamma}


# --------------------------------------------------------------------------- problem

def guard_width(kernel: KernelSpec, T: float, tol: float = 1e-4) -> float:
    """Distance beyond which ``g(t, .)`` carries mass below ``tol`` for all ``t <= T``."""
    arg = gammainccinv(kernel.dim / kernel.rho, tol)
    return float((arg * T ** kernel.tau / kernel.lambda_cap) ** (1.0 / kernel.rho))


def guard_mass_bound(kernel: KernelSpec, T: float, guard: float) -> float:
    """Upper bound on kernel mass reaching the evaluation box from outside the noise box."""
    if guard <= 0:
        return 1.0
    return float(kernel.outside_ball_mass(T, guard))


@dataclass(frozen=True)
class ProblemSpec:
    kernel: KernelSpec
    sigma: Sigma
    noise: LevyMarkSpec
    exponents: ExponentPair
    T: float
    R_eval: float
    R_noise: float | None = None
    psi: float | Callable = 1.0
    n_times: int = 11
    n_sites: int = 81
    guard_tol: float = 1e-4
    check_growth: bool = False
    n_quad: int | None = None

    def __post_init__(self):
        set_ = functools.partial(object.__setattr__, self)
        set_("T", check_positive("T", self.T))
        set_("R_eval", check_positive("R_eval", self.R_eval))
        set_("n_times", check_int("n_times", self.n_times, minimum=2))
        set_("n_sites", check_int("n_sites", self.n_sites, minimum=2))
        if self.R_noise is None:
            set_("R_noise", self.R_eval + guard_width(self.kernel, self.T, self.guard_tol) * (1 + 1e-9))
        set_("R_noise", check_positive("R_noise", self.R_noise))
        self.exponents.check(self.kernel)
        p, q = self.exponents.p, self.exponents.q
        noise = self.noise
        if noise.declared_p is None:
            noise = dataclasses.replace(noise, declared_p=p, declared_q=q)
        elif (noise.declared_p, noise.declared_q if noise.declared_q is not None else noise.declared_p) != (p, q):
            raise ConfigError("noise declares exponents different from the problem's (p, q)")
        set_("noise", noise)
        if not callable(self.psi):
            set_("psi", float(self.psi))
        self.validate()

    def validate(self) -> None:
        self.exponents.check(self.kernel)
        StoppingConfig(1, self.exponents.eta).validate(self.exponents.q, self.kernel.dim)
        self.sigma.check_lipschitz()
        if self.check_growth:
            g_max = self.exponents.q / self.exponents.p
            if self.sigma.gamma is None or self.sigma.gamma > g_max + 1e-15:
                raise HypothesisViolation(
                    f"moment bound needs |sigma(x)| <= C(1 + |x|^gamma) with gamma in [0, q/p] = "
                    f"[0, {g_max:g}], sigma declares gamma={self.sigma.gamma}"
                )
            self.sigma.check_growth()
        guard = self.R_noise - self.R_eval
        bound = guard_mass_bound(self.kernel, self.T, guard)
        if bound > self.guard_tol * (1 + 1e-9):
            raise ConfigError(
                f"guard band {guard:g} too thin: kernel mass {bound:.3g} from outside the noise box "
                f"exceeds {self.guard_tol:g}; need R_noise >= {self.R_eval + guard_width(self.kernel, self.T, self.guard_tol):g}"
            )
        if not np.all(np.isfinite(self.psi_values(self.sites()))):
            raise ConfigError("initial condition must be finite on the lattice")

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def box(self) -> tuple[float, float]:
        return (self.T, self.R_noise)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_times)

    def axes(self) -> tuple[np.ndarray, ...]:
        ax = np.linspace(-self.R_noise, self.R_noise, self.n_sites)
        return (ax,) * self.dim

    def sites(self) -> np.ndarray:
        return _lattice(self.axes())

    def psi_values(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if callable(self.psi):
            return np.asarray(self.psi(points), dtype=float).reshape(len(points))
        return np.full(len(points), self.psi)

    def guard_mass_bound(self) -> float:
        return guard_mass_bound(self.kernel, self.T, self.R_noise - self.R_eval)

    def stopping(self, N: int) -> StoppingConfig:
        return StoppingConfig(N, self.exponents.eta)

    def empty_grid(self) -> "FieldGrid":
        shape = (self.n_times,) + (self.n_sites,) * self.dim
        return FieldGrid(self.times(), self.axes(), np.zeros(shape), self.exponents.p)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(), "sigma": self.sigma.to_dict(), "noise": self.noise.to_dict(),
            "exponents": self.exponents.to_dict(), "T": self.T, "R_eval": self.R_eval,
            "R_noise": self.R_noise, "psi": self.psi if not callable(self.psi) else "callable",
            "n_times": self.n_times, "n_sites": self.n_sites, "guard_tol": self.guard_tol,
        }


# --------------------------------------------------------------------------- grid

def _lattice(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.reshape(-1) for m in mesh])


@dataclass(frozen=True, eq=False)
class FieldGrid:
    times: np.ndarray
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    norm_p: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "axes", tuple(np.asarray(a, dtype=float) for a in self.axes))
        values = np.asarray(self.values, dtype=float)
        expected = (len(self.times),) + tuple(len(a) for a in self.axes)
        if values.shape != expected:
            raise ConfigError(f"values have shape {values.shape}, grid needs {expected}")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_sites(self) -> int:
        return int(np.prod([len(a) for a in self.axes]))

    def sites(self) -> np.ndarray:
        return _lattice(self.axes)

    def flat(self) -> np.ndarray:
        return self.values.reshape(len(self.times), -1)

    def same_grid(self, other: "FieldGrid") -> bool:
        return (np.array_equal(self.times, other.times) and self.dim == other.dim
                and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes)))

    def with_values(self, values) -> "FieldGrid":
        return FieldGrid(self.times, self.axes, values, self.norm_p)

    def restrict(self, R: float | None = None, T: float | None = None) -> "FieldGrid":
        """Sub-grid of nodes with ``t <= T`` and ``|x_i| <= R`` (inclusive, with rounding slack)."""
        tmask = np.ones(len(self.times), bool) if T is None else self.times <= T * (1 + 1e-12) + 1e-15
        masks = [np.ones(len(a), bool) if R is None else np.abs(a) <= R * (1 + 1e-12) + 1e-12 for a in self.axes]
        vals = self.values[np.ix_(tmask, *masks)]
        return FieldGrid(self.times[tmask], tuple(a[m] for a, m in zip(self.axes, masks)), vals, self.norm_p)

    def interpolation_weights(self, s, y):
        """Level index, flat corner indices and weights for reading the field at ``(s, y)``.

        Time is piecewise constant from the last level ``<= s``; space is
        multilinear. Raises :class:`GuardBandError` outside the lattice hull.
        """
        s = np.asarray(s, dtype=float).reshape(-1)
        y = check_points(y, self.dim)
        level = np.searchsorted(self.times, s, side="right") - 1
        if np.any(level < 0):
            raise GuardBandError("interpolation before the first time level")
        lo_idx, frac = [], []
        for k, ax in enumerate(self.axes):
            c = y[:, k]
            if np.any(c < ax[0] - 1e-12) or np.any(c > ax[-1] + 1e-12):
                bad = y[(c < ax[0] - 1e-12) | (c > ax[-1] + 1e-12)][0]
                raise GuardBandError(
                    f"point {bad.tolist()} lies outside the field lattice [{ax[0]:g}, {ax[-1]:g}]^{self.dim}"
                )
            i = np.clip(np.searchsorted(ax, c, side="right") - 1, 0, len(ax) - 2)
            f = np.clip((c - ax[i]) / (ax[i + 1] - ax[i]), 0.0, 1.0)
            lo_idx.append(i)
            frac.append(f)
        shape = tuple(len(a) for a in self.axes)
        corners, weights = [], []
        for bits in np.ndindex(*(2,) * self.dim):
            idx = tuple(lo_idx[k] + bits[k] for k in range(self.dim))
            w = np.ones(len(s))
            for k in range(self.dim):
                w = w * (frac[k] if bits[k] else 1.0 - frac[k])
            corners.append(np.ravel_multi_index(idx, shape))
            weights.append(w)
        return level, np.stack(corners, axis=1), np.stack(weights, axis=1)

    def interpolate(self, s, y) -> np.ndarray:
        level, corners, weights = self.interpolation_weights(s, y)
        flat = self.flat()
        return np.sum(flat[level[:, None], corners] * weights, axis=1)


# --------------------------------------------------------------------------- numerics

def compensated_sum(a, axis: int = -1) -> np.ndarray:
    """Pairwise summation with TwoSum error compensation along ``axis``.

    Deterministic for a given input order; error roughly ``eps |sum| +
    (eps log n)**2 sum|a|``.
    """
    a = np.moveaxis(np.asarray(a, dtype=float), axis, -1)
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1])
    err = np.zeros(a.shape[:-1])
    s = a
    while s.shape[-1] > 1:
        if s.shape[-1] % 2:
            s = np.concatenate([s, np.zeros(s.shape[:-1] + (1,))], axis=-1)
        x, y = s[..., 0::2], s[..., 1::2]
        t = x + y
        bp = t - x
        err = err + np.sum((x - (t - bp)) + (y - bp), axis=-1)
        s = t
    return s[..., 0] + err


@functools.lru_cache(maxsize=16)
def _legendre(n: int):
    x, w = roots_legendre(n)
    return x, w


def _window_halfwidth(kernel: KernelSpec) -> float:
    """Half-width (at t = 1) outside of which the kernel mass is below 1e-16."""
    arg = gammainccinv(kernel.dim / kernel.rho, 1e-16)
    return float((arg / kernel.lambda_cap) ** (1.0 / kernel.rho))


def _default_quad(dim: int) -> int:
    return {1: 256, 2: 48, 3: 20}[dim]


def kernel_convolve(kernel: KernelSpec, lag: float, nodes: np.ndarray, f, R: float, n_quad: int,
                    chunk: int = 2_000_000) -> np.ndarray:
    """``int_{[-R, R]^d} g(lag, x - y) f(y) dy`` at every row ``x`` of ``nodes``.

    Gauss-Legendre on the window ``x +- W lag**(tau/rho)`` clipped to the box.
    """
    nodes = np.asarray(nodes, dtype=float)
    d = kernel.dim
    gx, gw = _legendre(n_quad)
    w = _window_halfwidth(kernel) * float(kernel.spread(lag))
    lo = np.maximum(nodes - w, -R)
    hi = np.minimum(nodes + w, R)
    out = np.zeros(len(nodes))
    per_node = n_quad ** d
    step = max(1, chunk // per_node)
    for start in range(0, len(nodes), step):
        sl = slice(start, start + step)
        half = (hi[sl] - lo[sl]) / 2.0
        mid = (hi[sl] + lo[sl]) / 2.0
        empty = np.any(half <= 0, axis=1)
        half = np.where(half > 0, half, 0.0)
        # quadrature points per axis: (m, n_quad) each
        pts_ax = [mid[:, k:k + 1] + half[:, k:k + 1] * gx[None, :] for k in range(d)]
        wts_ax = [half[:, k:k + 1] * gw[None, :] for k in range(d)]
        if d == 1:
            pts = pts_ax[0][..., None]
            wts = wts_ax[0]
        else:
            mesh = np.meshgrid(*[np.arange(n_quad)] * d, indexing="ij")
            idx = [m.reshape(-1) for m in mesh]
            pts = np.stack([pts_ax[k][:, idx[k]] for k in range(d)], axis=-1)
            wts = np.prod(np.stack([wts_ax[k][:, idx[k]] for k in range(d)], axis=0), axis=0)
        m = pts.shape[0]
        r = np.sqrt(np.sum((pts - nodes[sl][:, None, :]) ** 2, axis=-1))
        gv = radial_density(kernel, lag, r)
        fv = np.asarray(f(pts.reshape(-1, d)), dtype=float).reshape(m, -1)
        out[sl] = np.where(empty, 0.0, np.sum(gv * fv * wts, axis=1))
    return out


def _ones(points):
    return np.ones(len(points))


def initial_field(psi, kernel: KernelSpec, times, axes, R: float, n_quad: int | None = None,
                  qtol: float = 1e-7) -> tuple[np.ndarray, dict]:
    """Heat-semigroup image ``Y0(t, x) = int_box g(t, x - y) psi(y) dy`` on the lattice.

    ``psi`` is a float (constant) or a vectorised callable on ``(n, d)`` points.
    Returns ``(values, report)``; ``report["boundary_mass"]`` is the largest
    kernel mass falling outside the box, per node. Each level is computed at
    ``n_quad`` and ``n_quad // 2`` points and a mismatch above ``qtol``
    (relative) raises :class:`QuadratureError` naming the node.
    """
    times = np.asarray(times, dtype=float)
    sites = _lattice(axes)
    d = kernel.dim
    n_quad = n_quad or _default_quad(d)
    if callable(psi):
        f = lambda pts: np.asarray(psi(pts), dtype=float).reshape(len(pts))  # noqa: E731
    else:
        c = float(psi)
        f = lambda pts: np.full(len(pts), c)  # noqa: E731
    values = np.empty((len(times), len(sites)))
    mass_out = np.zeros((len(times), len(sites)))
    for k, t in enumerate(times):
        if t <= 0:
            values[k] = f(sites)
            continue
        fine = kernel_convolve(kernel, t, sites, f, R, n_quad)
        coarse = kernel_convolve(kernel, t, sites, f, R, max(n_quad // 2, 4))
        bad = np.abs(fine - coarse) > qtol * np.maximum(1.0, np.abs(fine))
        if np.any(bad):
            m = int(np.argmax(bad))
            raise QuadratureError(
                f"initial-field quadrature did not converge at t={t:g}, x={sites[m].tolist()} "
                f"({fine[m]:.12g} vs {coarse[m]:.12g}); increase n_quad",
                node=(float(t), sites[m].tolist()),
            )
        values[k] = fine
        mass_out[k] = 1.0 - kernel_convolve(kernel, t, sites, _ones, R, n_quad)
    shape = (len(times),) + tuple(len(a) for a in axes)
    return values.reshape(shape), {"boundary_mass": mass_out.reshape(shape)}


@functools.lru_cache(maxsize=32)
def _problem_initial(problem: ProblemSpec):
    values, report = initial_field(problem.psi, problem.kernel, problem.times(), problem.axes(),
                                   problem.R_noise, problem.n_quad)
    values.setflags(write=False)
    return values, report


def problem_initial_field(problem: ProblemSpec) -> FieldGrid:
    values, _ = _problem_initial(problem)
    return FieldGrid(problem.times(), problem.axes(), values.copy(), problem.exponents.p)


def boundary_mass(problem: ProblemSpec) -> float:
    """Largest kernel mass lost at the box edge over evaluation-box nodes."""
    _, report = _problem_initial(problem)
    grid = FieldGrid(problem.times(), problem.axes(), report["boundary_mass"])
    return float(np.max(np.abs(grid.restrict(problem.R_eval).values)))


# --------------------------------------------------------------------------- convolution

def _sort_order(real: NoiseRealization) -> np.ndarray:
    keys = [real.marks] + [real.positions[:, k] for k in range(real.dim - 1, -1, -1)] + [real.times]
    return np.lexsort(keys)


def _effective_drift(real: NoiseRealization) -> float:
    return float(real.compensation.get("effective_drift", 0.0)) if real.compensation else 0.0


class _Plan:
    """Kernel weights between lattice nodes and atoms, reused across Picard steps."""

    def __init__(self, problem: ProblemSpec, real: NoiseRealization):
        if real.dim != problem.dim:
            raise ConfigError(f"realization has dim {real.dim}, problem has {problem.dim}")
        self.problem = problem
        self.grid = problem.empty_grid()
        order = _sort_order(real)
        self.s = real.times[order]
        self.y = real.positions[order]
        self.z = real.marks[order]
        self.drift = _effective_drift(real)
        times = self.grid.times
        self.sites = self.grid.sites()
        self.n_active = np.searchsorted(self.s, times, side="left")
        if len(self.s):
            self.level, self.corners, self.weights = self.grid.interpolation_weights(self.s, self.y)
        total = int(np.sum(self.n_active)) * len(self.sites)
        self.cache = {} if total <= _PLAN_CACHE_LIMIT else None

    def kernel_block(self, k: int) -> np.ndarray:
        if self.cache is not None and k in self.cache:
            return self.cache[k]
        n = self.n_active[k]
        t = self.grid.times[k]
        diff = self.sites[:, None, :] - self.y[None, :n, :]
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        block = radial_density(self.problem.kernel, t - self.s[None, :n], r)
        if self.cache is not None:
            self.cache[k] = block
        return block

    def atom_weights(self, prev: FieldGrid) -> np.ndarray:
        if not len(self.s):
            return np.empty(0)
        flat = prev.flat()
        yhat = np.sum(flat[self.level[:, None], self.corners] * self.weights, axis=1)
        return self.problem.sigma(yhat) * self.z


def _drift_values(problem: ProblemSpec, prev: FieldGrid, drift: float, n_time_quad: int = 6) -> np.ndarray:
    """``drift * int_0^t int_box g(t-s, x-y) sigma(Y(s, y)) dy ds`` at every node."""
    times = prev.times
    sites = prev.sites()
    flat = prev.flat()
    gx, gw = _legendre(n_time_quad)
    n_quad = problem.n_quad or _default_quad(problem.dim)
    out = np.zeros_like(flat)
    for j in range(len(times) - 1):
        level_vals = flat[j]
        sig = lambda pts, lv=level_vals: problem.sigma(  # noqa: E731
            prev.with_values(np.broadcast_to(lv, flat.shape).reshape(prev.values.shape))
            .interpolate(np.full(len(pts), times[0]), pts))
        a, b = times[j], times[j + 1]
        for k in range(j + 1, len(times)):
            acc = np.zeros(len(sites))
            for xi, wi in zip(gx, gw):
                s = 0.5 * (a + b) + 0.5 * (b - a) * xi
                acc += 0.5 * (b - a) * wi * kernel_convolve(problem.kernel, times[k] - s, sites, sig,
                                                             problem.R_noise, n_quad)
            out[k] += acc
    return drift * out


def stochastic_convolution(kernel: KernelSpec, sigma: Sigma, field: FieldGrid, real: NoiseRealization,
                           t: float, x, R: float | None = None) -> float:
    """Atom sum ``sum_{s < t} g(t-s, x-y) sigma(Y(s, y)) z`` plus the drift term.

    Atoms at ``s >= t`` are excluded. ``R`` is the half-width of the noise box
    used for the drift integral (defaults to the realization's box).
    """
    x = np.asarray(x, dtype=float).reshape(1, kernel.dim)
    order = _sort_order(real)
    s, y, z = real.times[order], real.positions[order], real.marks[order]
    active = s < t
    s, y, z = s[active], y[active], z[active]
    total = 0.0
    if len(s):
        yhat = field.interpolate(s, y)
        r = np.sqrt(np.sum((x - y) ** 2, axis=1))
        terms = radial_density(kernel, t - s, r) * sigma(yhat) * z
        total = float(compensated_sum(terms))
    drift = _effective_drift(real)
    if drift != 0.0:
        total += drift * _point_drift(kernel, sigma, field, t, x, real.R if R is None else R)
    return total


def _point_drift(kernel, sigma, field: FieldGrid, t, x, R, n_time_quad=6, n_quad=None) -> float:
    gx, gw = _legendre(n_time_quad)
    n_quad = n_quad or _default_quad(kernel.dim)
    total = 0.0
    edges = [tt for tt in field.times if tt < t] + [t]
    for j in range(len(edges) - 1):
        a, b = edges[j], edges[j + 1]
        level = np.searchsorted(field.times, a, side="right") - 1
        lv = field.flat()[level]
        frozen = field.with_values(np.broadcast_to(lv, field.flat().shape).reshape(field.values.shape))
        f = lambda pts, fr=frozen: sigma(fr.interpolate(np.zeros(len(pts)), pts))  # noqa: E731
        for xi, wi in zip(gx, gw):
            s = 0.5 * (a + b) + 0.5 * (b - a) * xi
            total += 0.5 * (b - a) * wi * float(kernel_convolve(kernel, t - s, x, f, R, n_quad)[0])
    return total


def picard_step(problem: ProblemSpec, real: NoiseRealization, prev: FieldGrid, *, plan: _Plan | None = None) -> FieldGrid:
    """One application of the integral operator: ``Y0 + J(prev)`` at every node."""
    plan = plan or _Plan(problem, real)
    if not prev.same_grid(plan.grid):
        raise ConfigError("previous iterate must live on the problem's full lattice")
    y0, _ = _problem_initial(problem)
    out = np.array(y0, dtype=float).reshape(len(plan.grid.times), -1)
    w = plan.atom_weights(prev)
    for k in range(1, len(plan.grid.times)):
        n = plan.n_active[k]
        if n:
            out[k] += compensated_sum(plan.kernel_block(k) * w[None, :n])
    if plan.drift != 0.0:
        out += _drift_values(problem, prev, plan.drift).reshape(out.shape)
    return prev.with_values(out.reshape(prev.values.shape))


# --------------------------------------------------------------------------- solve

@dataclass
class SolveDiagnostics:
    increments: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    level: int | None = None
    stopping_time: object = BEYOND_WINDOW
    guard_mass_bound: float = 0.0
    boundary_mass: float = 0.0
    n_atoms: int = 0
    n_atoms_used: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        st = self.stopping_time
        return {
            "increments": list(self.increments), "iterations": self.iterations,
            "converged": self.converged, "level": self.level,
            "stopping_time": "beyond_window" if st is BEYOND_WINDOW else st,
            "guard_mass_bound": self.guard_mass_bound, "boundary_mass": self.boundary_mass,
            "n_atoms": self.n_atoms, "n_atoms_used": self.n_atoms_used, "seed": self.seed,
        }


def picard_iterates(problem: ProblemSpec, real: NoiseRealization, n_steps: int):
    """Yield ``Y^1, Y^2, ...`` (``n_steps`` of them) starting from ``Y^0 = Y0``."""
    plan = _Plan(problem, real)
    current = problem_initial_field(problem)
    for _ in range(n_steps):
        current = picard_step(problem, real, current, plan=plan)
        yield current


def solve(problem: ProblemSpec, real: NoiseRealization, cfg: StoppingConfig | None = None,
          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[FieldGrid, SolveDiagnostics]:
    """Picard iteration to the fixed point.

    With ``cfg`` the noise is first truncated adaptively at level ``cfg.N``;
    with ``cfg=None`` the realization is used as given. Stops at the first
    ``n`` with ``max |Y^n - Y^{n-1}| < tol`` and reports ``iterations = n - 1``
    (the number of steps that changed the field).
    """
    tol = check_positive("tol", tol)
    max_iter = check_int("max_iter", max_iter, minimum=1)
    diag = SolveDiagnostics(guard_mass_bound=problem.guard_mass_bound(), boundary_mass=boundary_mass(problem),
                            n_atoms=len(real), seed=real.seed)
    used = real
    if cfg is not None:
        diag.level = cfg.N
        diag.stopping_time = stopping_time(real, cfg)
        used = truncate_adaptive(real, cfg)
    diag.n_atoms_used = len(used)
    plan = _Plan(problem, used)
    current = problem_initial_field(problem)
    for n in range(1, max_iter + 1):
        nxt = picard_step(problem, used, current, plan=plan)
        inc = float(np.max(np.abs(nxt.values - current.values)))
        diag.increments.append(inc)
        if not np.isfinite(inc):
            break
        current = nxt
        if inc < tol:
            diag.iterations = n - 1
            diag.converged = True
            logger.debug("converged after %d steps (seed %s)", n - 1, real.seed)
            return current, diag
    raise ConvergenceError(
        f"Picard iteration did not reach tol={tol:g} within {max_iter} steps; "
        f"last increments {diag.increments[-3:]}",
        diag.increments,
    )


def auto_levels(real: NoiseRealization, N0: int, eta: float, max_levels: int = 64) -> list[int]:
    """Doubling ladder ``N0, 2 N0, ...`` until the cloud is untouched by truncation."""
    top = stabilization_level(real, eta)
    levels = [N0]
    while levels[-1] < top and len(levels) < max_levels:
        levels.append(levels[-1] * 2)
    return levels


def glue(problem: ProblemSpec, real: NoiseRealization, levels, eta: float | None = None,
         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[FieldGrid, dict]:
    """Piece the level-N solutions together between consecutive stopping times.

    Node ``t_k`` takes its value from the first level ``N_j`` with
    ``t_k <= tau(N_j)``. Raises :class:`InsufficientLevelError` if some grid
    time lies beyond the largest level's stopping time.
    """
    levels = [check_int("level", N, minimum=1) for N in levels]
    if not levels:
        raise ConfigError("glue needs at least one truncation level")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must be strictly increasing")
    eta = problem.exponents.eta if eta is None else eta
    times = problem.times()
    taus = [stopping_time(real, StoppingConfig(N, eta)) for N in levels]
    last = as_time(taus[-1])
    if np.any(times > last):
        raise InsufficientLevelError(
            f"largest level N={levels[-1]} stops at tau={last:g} < T={problem.T:g}; add a larger level"
        )
    source = np.array([next(j for j, tau in enumerate(taus) if t <= as_time(tau)) for t in times])
    out = np.empty(problem.empty_grid().values.shape)
    diags = []
    for j, N in enumerate(levels):
        rows = source == j
        if not rows.any():
            continue
        field_j, diag = solve(problem, real, StoppingConfig(N, eta), tol, max_iter)
        out[rows] = field_j.values[rows]
        diags.append(diag.to_dict())
    grid = FieldGrid(times, problem.axes(), out, problem.exponents.p)
    info = {
        "levels": levels,
        "stopping_times": ["beyond_window" if tau is BEYOND_WINDOW else tau for tau in taus],
        "source_level": [levels[j] for j in source],
        "solves": diags,
    }
    return grid, info


class PicardSolver(BaseEstimator):
    """Estimator wrapper: ``fit`` a noise realization, ``predict`` the field at ``(t, x)`` rows.

    ``N=None`` solves with the realization as given; an integer ``N``
    truncates adaptively; ``levels`` (a list) glues several levels.
    """

    def __init__(self, problem=None, N=None, levels=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        self.problem = problem
        self.N = N
        self.levels = levels
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X: NoiseRealization, y=None):
        if self.problem is None:
            raise ConfigError("PicardSolver needs a ProblemSpec")
        if self.levels is not None:
            self.field_, self.diagnostics_ = glue(self.problem, X, self.levels, tol=self.tol,
                                                  max_iter=self.max_iter)
        else:
            cfg = None if self.N is None else self.problem.stopping(self.N)
            self.field_, diag = solve(self.problem, X, cfg, self.tol, self.max_iter)
            self.diagnostics_ = diag.to_dict()
        return self

    def predict(self, X) -> np.ndarray:
        """``X`` has rows ``(t, x_1, ..., x_d)``."""
        check_is_fitted(self, "field_")
        X = np.asarray(X, dtype=float)
        d = self.field_.dim
        if X.ndim != 2 or X.shape[1] != d + 1:
            raise ConfigError(f"expected rows (t, x_1..x_{d}), got shape {X.shape}")
        return self.field_.interpolate(X[:, 0], X[:, 1:])

    def transform(self, X):
        return self.fit(X).field_
