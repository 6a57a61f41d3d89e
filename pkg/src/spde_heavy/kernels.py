"""Generalized Gaussian kernels and the closed-form quantities built on them.

A kernel family is parametrised by a shape exponent ``rho``, a time-scaling
exponent ``tau`` and a decay constant ``lambda_cap``::

    g(t, x) = K * t**(-tau*d/rho) * exp(-lambda_cap * |x|**rho / t**tau),  t > 0

with ``K`` chosen so that ``g(t, .)`` is a probability density on R^d.
``(rho, tau, lambda_cap) = (2, 1, 1/4)`` is the heat kernel of ``d/dt - Laplace``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, gammaincc

from ._validation import check_dim, check_int, check_positive, radius
from .exceptions import AdmissibilityError, ConfigError


class InfeasibleExponentsWarning(RuntimeWarning):
    """The Picard decay bound diverges for the requested exponents."""


def normalization_constant(rho: float, tau: float, lambda_cap: float, dim: int) -> float:
    """Constant making ``x -> g(t, x)`` integrate to one.

    Independent of ``t`` and ``tau``; obtained from the radial integral
    ``int_0^inf r**(d-1) exp(-a r**rho) dr = Gamma(d/rho) / (rho a**(d/rho))``.
    """
    rho = check_positive("rho", rho)
    check_positive("tau", tau)
    lambda_cap = check_positive("lambda_cap", lambda_cap)
    dim = check_dim(dim)
    log_k = (
        math.log(rho)
        + (dim / rho) * math.log(lambda_cap)
        + gammaln(dim / 2.0)
        - math.log(2.0)
        - (dim / 2.0) * math.log(math.pi)
        - gammaln(dim / rho)
    )
    return math.exp(log_k)


@dataclass(frozen=True)
class KernelSpec:
    rho: float
    tau: float
    lambda_cap: float
    dim: int = 1
    norm_const: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rho", check_positive("rho", self.rho))
        object.__setattr__(self, "tau", check_positive("tau", self.tau))
        object.__setattr__(self, "lambda_cap", check_positive("lambda_cap", self.lambda_cap))
        object.__setattr__(self, "dim", check_dim(self.dim))
        object.__setattr__(
            self, "norm_const",
            normalization_constant(self.rho, self.tau, self.lambda_cap, self.dim),
        )

    @classmethod
    def heat(cls, dim: int = 1) -> "KernelSpec":
        return cls(2.0, 1.0, 0.25, dim)

    @classmethod
    def parabolic(cls, m: int, dim: int = 1, lambda_cap: float = 0.25) -> "KernelSpec":
        """Dominating kernel of a uniformly parabolic operator of order ``2m``."""
        m = check_int("m", m, minimum=1)
        return cls(2.0 * m / (2.0 * m - 1.0), 1.0 / (2.0 * m - 1.0), lambda_cap, dim)

    @property
    def p_max(self) -> float:
        """Supremum of exponents ``p`` for which ``g**p`` is space-time integrable."""
        return 1.0 + self.rho / (self.tau * self.dim)

    def time_singularity(self, p: float) -> float:
        """Exponent ``(p-1) tau d / rho`` of ``t`` in ``int g**p(t, x) dx``."""
        return (p - 1.0) * self.tau * self.dim / self.rho

    def with_lambda(self, lambda_cap: float) -> "KernelSpec":
        return KernelSpec(self.rho, self.tau, lambda_cap, self.dim)

    def spread(self, t) -> np.ndarray:
        """Natural length scale ``t**(tau/rho)`` of ``g(t, .)``."""
        return np.asarray(t, dtype=float) ** (self.tau / self.rho)

    def outside_ball_mass(self, t, r) -> np.ndarray:
        """Mass of ``g(t, .)`` outside the centred ball of radius ``r``."""
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        arg = self.lambda_cap * r ** self.rho / np.where(t > 0, t, np.inf) ** self.tau
        return np.where(t > 0, gammaincc(self.dim / self.rho, arg), 0.0)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "tau": self.tau, "lambda_cap": self.lambda_cap, "dim": self.dim}


def radial_density(spec: KernelSpec, t, r) -> np.ndarray:
    """Kernel value as a function of time and distance ``r = |x|``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    val = (
        spec.norm_const
        * ts ** (-spec.tau * spec.dim / spec.rho)
        * np.exp(-spec.lambda_cap * r ** spec.rho / ts ** spec.tau)
    )
    return np.where(pos, val, 0.0)


def kernel_density(spec: KernelSpec, t, x) -> np.ndarray:
    """Evaluate ``g(t, x)``; zero for ``t <= 0``.

    ``x`` carries its coordinates on the last axis (a flat array is fine in
    one dimension). Broadcasting follows numpy rules between ``t`` and the
    point shape.
    """
    return radial_density(spec, t, radius(x, spec.dim))


def power_rescaling(spec: KernelSpec, p: float) -> tuple[Callable[[np.ndarray], np.ndarray], KernelSpec]:
    """Write ``g**p`` as a time prefactor times a member of the same family.

    Returns ``(prefactor, rescaled)`` with ``g(t, x)**p == prefactor(t) *
    g_rescaled(t, x)``, where ``rescaled`` has decay constant ``p * lambda_cap``.
    """
    p = check_positive("p", p)
    rescaled = spec.with_lambda(p * spec.lambda_cap)
    ratio = spec.norm_const ** p / rescaled.norm_const
    expo = spec.time_singularity(p)

    def prefactor(t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, ratio * np.where(t > 0, t, 1.0) ** (-expo), 0.0)

    return prefactor, rescaled


def kernel_lp_norm(spec: KernelSpec, p: float, T: float) -> float:
    """``int_0^T int g**p(t, x) dx dt``; ``inf`` once ``p >= p_max``."""
    p = check_positive("p", p)
    T = check_positive("T", T)
    expo = spec.time_singularity(p)
    if expo >= 1.0:
        return math.inf
    ratio = spec.norm_const ** p / spec.with_lambda(p * spec.lambda_cap).norm_const
    return ratio * T ** (1.0 - expo) / (1.0 - expo)


def gaussian_abs_moment(variance: float, p: float) -> float:
    """``E|X|**p`` for ``X ~ N(0, variance)`` and ``p > -1``."""
    variance = check_positive("variance", variance)
    if not p > -1:
        raise ConfigError(f"absolute Gaussian moments need p > -1, got {p}")
    return math.exp(
        0.5 * p * math.log(2.0 * variance) - 0.5 * math.log(math.pi) + gammaln((1.0 + p) / 2.0)
    )


def iterated_time_integral(t: float, a: float, n: int) -> float:
    """Integral of ``prod_j (t_{j-1} - t_j)**a`` over the n-simplex below ``t``."""
    if not a > -1:
        raise ConfigError(f"iterated integral needs a > -1, got {a}")
    n = check_int("n", n, minimum=1)
    t = check_positive("t", t, allow_zero=True)
    if t == 0.0:
        return 0.0
    log_val = n * gammaln(1.0 + a) - gammaln(1.0 + (1.0 + a) * n) + n * (1.0 + a) * math.log(t)
    return math.exp(log_val)


def q_threshold(p: float, rho: float, tau: float, dim: float) -> float:
    """Lower bound on ``q`` for a given ``p``; ``dim`` may be any positive real."""
    return p / (1.0 + tau * (1.0 + rho / (tau * dim) - p))


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    p: float
    q: float
    p_max: float
    q_threshold: float
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.admissible

    def to_dict(self) -> dict:
        return {
            "admissible": self.admissible, "p": self.p, "q": self.q,
            "p_max": self.p_max, "q_threshold": self.q_threshold, "reasons": list(self.reasons),
        }


def admissible(p: float, q: float, spec: KernelSpec) -> AdmissibilityReport:
    p = check_positive("p", p)
    q = check_positive("q", q)
    reasons = []
    p_max = spec.p_max
    if not p < p_max:
        reasons.append(f"p={p:g} must be < 1 + rho/(tau d) = {p_max:g}")
    thr = q_threshold(p, spec.rho, spec.tau, spec.dim)
    if p < p_max and not q > thr:
        reasons.append(f"q={q:g} must exceed p/(1 + tau(1 + rho/(tau d) - p)) = {thr:g}")
    if q > p:
        reasons.append(f"q={q:g} must be <= p={p:g}")
    return AdmissibilityReport(not reasons, p, q, p_max, thr, tuple(reasons))


def eta_window(p: float, q: float, spec: KernelSpec) -> tuple[float, float]:
    """Open interval of growth exponents ``eta`` that make the Picard bound decay."""
    lower = spec.dim / q
    margin = 1.0 - spec.time_singularity(p)
    if p == q:
        upper = math.inf if margin > 0 else -math.inf
    else:
        upper = spec.rho * margin / (p - q)
    return lower, upper


@dataclass(frozen=True)
class ExponentPair:
    p: float
    q: float
    eta: float

    def __post_init__(self):
        p = check_positive("p", self.p)
        q = check_positive("q", self.q)
        eta = check_positive("eta", self.eta)
        if p >= 2:
            raise ConfigError(f"p must be < 2 (pure-jump noise only), got {p}")
        if q > p:
            raise ConfigError(f"q must satisfy 0 < q <= p, got q={q}, p={p}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "eta", eta)

    def check(self, spec: KernelSpec) -> AdmissibilityReport:
        """Raise :class:`AdmissibilityError` unless usable with ``spec``."""
        report = admissible(self.p, self.q, spec)
        if not report:
            raise AdmissibilityError("; ".join(report.reasons))
        lo, hi = eta_window(self.p, self.q, spec)
        if not lo < self.eta < hi:
            raise AdmissibilityError(
                f"eta={self.eta:g} outside the feasible window ({lo:g}, {hi:g}): "
                "need eta > d/q and eta(p-q)/rho < 1 - (p-1) tau d / rho"
            )
        return report

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "eta": self.eta}


def log_picard_decay_bound(n: int, C: float, p: float, q: float, eta: float, spec: KernelSpec) -> float:
    """Natural log of :func:`picard_decay_bound`."""
    n = check_int("n", n, minimum=1)
    C = check_positive("C", C)
    margin = 1.0 - spec.time_singularity(p)
    if margin <= 0:
        return math.inf
    return (
        n * math.log(C)
        + gammaln((spec.dim + n * eta * (p - q)) / spec.rho)
        + n * gammaln(margin)
        - gammaln(1.0 + margin * n)
    )


def picard_decay_bound(n: int, C: float, p: float, q: float, eta: float, spec: KernelSpec) -> float:
    """Upper bound on the ``n``-th Picard increment, up to the constant ``C``.

    ``C**n Gamma((d + n eta (p-q))/rho) Gamma(m)**n / Gamma(1 + m n)`` with
    ``m = 1 - (p-1) tau d / rho``. Evaluated through log-Gamma. Emits
    :class:`InfeasibleExponentsWarning` when ``eta`` lies outside the window of
    :func:`eta_window`, in which case the sequence grows without bound.
    """
    lo, hi = eta_window(p, q, spec)
    if not lo < eta < hi:
        warnings.warn(
            f"eta={eta:g} outside ({lo:g}, {hi:g}); the bound diverges as n grows",
            InfeasibleExponentsWarning,
            stacklevel=2,
        )
    log_val = log_picard_decay_bound(n, C, p, q, eta, spec)
    if log_val > 709.0:
        return math.inf
    return math.exp(log_val)
