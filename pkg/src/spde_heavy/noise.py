"""Pure-jump Levy noise on a space-time box: sampling, truncation, stopping times.

The noise is a Poisson random measure with intensity ``dt dx lambda(dz)``.
Jumps with ``|z| < cutoff`` are not simulated; the resulting error in the
small-jump p-th moment is recorded as ``discarded_mass_bound``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_dim, check_int, check_positive, check_seed, radius, UINT64_MASK
from .exceptions import AdmissibilityError, ConfigError

STABLE = "stable"
DISCRETE = "discrete"


@functools.total_ordering
class _BeyondWindow:
    """Stopping time that did not occur inside the simulated window.

    Orders above every real number so monotonicity checks stay simple.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BEYOND_WINDOW"

    def __eq__(self, other):
        return other is self

    def __lt__(self, other):
        return False

    def __gt__(self, other):
        return other is not self

    def __hash__(self):
        return hash("BEYOND_WINDOW")

    def __reduce__(self):
        return (_BeyondWindow, ())


BEYOND_WINDOW = _BeyondWindow()


def as_time(value) -> float:
    """Map a stopping time to a float, with the sentinel as ``inf``."""
    return math.inf if value is BEYOND_WINDOW else float(value)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & UINT64_MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & UINT64_MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & UINT64_MASK
    return x ^ (x >> 31)


def realization_seed(master_seed: int, index: int) -> int:
    """Seed of realization ``index`` in an ensemble.

    ``splitmix64(master_seed XOR splitmix64(index))``: each realization gets
    an independent-looking 64-bit seed that does not depend on scheduling.
    """
    master_seed = check_seed(master_seed)
    index = check_int("index", index)
    return splitmix64(master_seed ^ splitmix64(index))


@dataclass(frozen=True)
class LevyMarkSpec:
    """Mark (jump-size) measure plus drift and declared exponents.

    ``family == "stable"`` means ``lambda(dz) = scale |z|**(-1-alpha) dz``.
    ``family == "discrete"`` means ``lambda = sum_k rates[k] delta_{atoms[k]}``.
    """

    family: str = STABLE
    alpha: float | None = None
    scale: float = 1.0
    atoms: tuple[float, ...] = ()
    rates: tuple[float, ...] = ()
    cutoff: float = 0.1
    drift: float = 0.0
    declared_p: float | None = None
    declared_q: float | None = None

    def __post_init__(self):
        if self.family == STABLE:
            if self.alpha is None or not 0 < self.alpha < 2:
                raise ConfigError(f"stable family needs 0 < alpha < 2, got {self.alpha}")
            check_positive("scale", self.scale, allow_zero=True)
        elif self.family == DISCRETE:
            atoms = tuple(float(a) for a in self.atoms)
            rates = tuple(float(r) for r in self.rates)
            if len(atoms) != len(rates):
                raise ConfigError("discrete family needs as many rates as atoms")
            if any(r < 0 for r in rates) or any(a == 0 for a in atoms):
                raise ConfigError("discrete atoms must be nonzero with nonnegative rates")
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "rates", rates)
        else:
            raise ConfigError(f"unknown mark family {self.family!r}")
        cutoff = check_positive("cutoff", self.cutoff)
        if cutoff > 1:
            raise ConfigError(f"cutoff must lie in (0, 1], got {cutoff}")
        if self.declared_p is not None:
            self._check_declared()

    @classmethod
    def symmetric_stable(cls, alpha, scale=1.0, cutoff=0.1, drift=0.0, p=None, q=None):
        return cls(STABLE, alpha=alpha, scale=scale, cutoff=cutoff, drift=drift,
                   declared_p=p, declared_q=q)

    @classmethod
    def discrete(cls, atoms, rates, cutoff=0.1, drift=0.0, p=None, q=None):
        return cls(DISCRETE, atoms=tuple(atoms), rates=tuple(rates), cutoff=cutoff,
                   drift=drift, declared_p=p, declared_q=q)

    def _check_declared(self):
        p = self.declared_p
        q = self.declared_q if self.declared_q is not None else p
        small = moment_integral(self, p, "small")
        big = moment_integral(self, q, "big")
        if not (math.isfinite(small) and math.isfinite(big)):
            raise AdmissibilityError(
                f"mark measure violates the (p, q) integrability requirement: "
                f"small-jump |z|^{p:g} integral = {small}, big-jump |z|^{q:g} integral = {big}"
            )
        if p < 1 and self.drift_b0() != 0:
            raise AdmissibilityError(f"p={p:g} < 1 requires zero drift b0, got {self.drift_b0():g}")

    @property
    def compensated(self) -> bool:
        """Small jumps are compensated unless a declared ``p < 1`` says otherwise."""
        return self.declared_p is None or self.declared_p >= 1

    def drift_b0(self) -> float:
        """Drift once the small jumps are left uncompensated."""
        return self.drift - _first_moment(self, 0.0, 1.0)

    def total_mass(self) -> float:
        """``lambda({|z| >= cutoff})``, the jump rate per unit space-time volume."""
        return tail_mass(self, self.cutoff, inclusive=True)

    def compensation(self) -> dict:
        if self.compensated:
            comp = _first_moment(self, self.cutoff, 1.0)
            return {"convention": "compensated", "drift": self.drift,
                    "compensator": comp, "effective_drift": self.drift - comp}
        return {"convention": "uncompensated", "drift": self.drift,
                "compensator": 0.0, "effective_drift": 0.0}

    def discarded_mass_bound(self) -> float | None:
        """``int_{|z| < cutoff} |z|**p lambda(dz)`` for the declared ``p``."""
        if self.declared_p is None:
            return None
        p = self.declared_p
        if self.family == STABLE:
            if p <= self.alpha:
                return math.inf
            return 2.0 * self.scale * self.cutoff ** (p - self.alpha) / (p - self.alpha)
        return float(sum(r * abs(a) ** p for a, r in zip(self.atoms, self.rates) if abs(a) < self.cutoff))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family, "cutoff": self.cutoff, "drift": self.drift,
                               "declared_p": self.declared_p, "declared_q": self.declared_q}
        if self.family == STABLE:
            out.update(alpha=self.alpha, scale=self.scale)
        else:
            out.update(atoms=list(self.atoms), rates=list(self.rates))
        return out


def _first_moment(spec: LevyMarkSpec, lo: float, hi: float) -> float:
    """``int_{lo <= |z| <= hi} z lambda(dz)``; zero for the symmetric stable family."""
    if spec.family == STABLE:
        return 0.0
    return float(sum(r * a for a, r in zip(spec.atoms, spec.rates) if lo <= abs(a) <= hi))


def tail_mass(spec: LevyMarkSpec, a: float, inclusive: bool = False) -> float:
    """``lambda({|z| > a})``, or ``lambda({|z| >= a})`` when ``inclusive``."""
    if spec.family == STABLE:
        return 2.0 * spec.scale * a ** (-spec.alpha) / spec.alpha
    if inclusive:
        return float(sum(r for z, r in zip(spec.atoms, spec.rates) if abs(z) >= a))
    return float(sum(r for z, r in zip(spec.atoms, spec.rates) if abs(z) > a))


def moment_integral(spec: LevyMarkSpec, exponent: float, region: str) -> float:
    """``int |z|**exponent lambda(dz)`` over ``|z| <= 1`` ("small") or ``|z| > 1`` ("big")."""
    e = check_positive("exponent", exponent, allow_zero=True)
    if region not in ("small", "big"):
        raise ConfigError(f"region must be 'small' or 'big', got {region!r}")
    if spec.family == STABLE:
        if spec.scale == 0:
            return 0.0
        if region == "small":
            return 2.0 * spec.scale / (e - spec.alpha) if e > spec.alpha else math.inf
        return 2.0 * spec.scale / (spec.alpha - e) if e < spec.alpha else math.inf
    total = 0.0
    for a, r in zip(spec.atoms, spec.rates):
        if (abs(a) <= 1) == (region == "small"):
            total += r * abs(a) ** e
    return total


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Finite atom cloud on ``[0, T] x [-R, R]^dim`` in generation order."""

    times: np.ndarray
    positions: np.ndarray
    marks: np.ndarray
    T: float
    R: float
    dim: int
    cutoff: float
    seed: int | None
    compensation: dict = field(default_factory=dict)
    discarded_mass_bound: float | None = None
    mark_spec: LevyMarkSpec | None = None

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float).reshape(-1)
        positions = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, self.dim)
        marks = np.ascontiguousarray(self.marks, dtype=float).reshape(-1)
        if not len(times) == len(positions) == len(marks):
            raise ConfigError("times, positions and marks must have equal length")
        for arr in (times, positions, marks):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "marks", marks)

    @classmethod
    def from_atoms(cls, atoms, T, R, dim=1, cutoff=1e-300, seed=None, **kwargs):
        """Build a realization from explicit ``(t, x..., z)`` rows (planted clouds, tests)."""
        arr = np.asarray(atoms, dtype=float).reshape(-1, dim + 2)
        return cls(arr[:, 0], arr[:, 1:1 + dim], arr[:, -1], T=float(T), R=float(R), dim=dim,
                   cutoff=cutoff, seed=seed, **kwargs)

    def __len__(self) -> int:
        return len(self.marks)

    def subset(self, mask) -> "NoiseRealization":
        mask = np.asarray(mask, dtype=bool)
        return NoiseRealization(
            self.times[mask], self.positions[mask], self.marks[mask], self.T, self.R, self.dim,
            self.cutoff, self.seed, dict(self.compensation), self.discarded_mass_bound, self.mark_spec,
        )

    def with_marks(self, marks) -> "NoiseRealization":
        return NoiseRealization(
            self.times, self.positions, marks, self.T, self.R, self.dim, self.cutoff, self.seed,
            dict(self.compensation), self.discarded_mass_bound, self.mark_spec,
        )

    @property
    def big(self) -> np.ndarray:
        return np.abs(self.marks) > 1.0

    def atom_rows(self) -> np.ndarray:
        return np.column_stack([self.times, self.positions, self.marks])

    def same_atoms(self, other: "NoiseRealization") -> bool:
        return (self.T == other.T and self.R == other.R and self.dim == other.dim
                and np.array_equal(self.atom_rows(), other.atom_rows()))

    def metadata(self) -> dict:
        return {
            "T": self.T, "R": self.R, "dim": self.dim, "cutoff": self.cutoff, "seed": self.seed,
            "n_atoms": len(self), "compensation": self.compensation,
            "discarded_mass_bound": self.discarded_mass_bound,
            "mark_spec": self.mark_spec.to_dict() if self.mark_spec is not None else None,
        }


def sample_noise(spec: LevyMarkSpec, box: tuple[float, float], seed: int, dim: int = 1) -> NoiseRealization:
    """Draw one atom cloud on ``[0, T] x [-R, R]^dim``.

    Atom count ~ Poisson(T (2R)^dim lambda(|z| >= cutoff)); positions are
    uniform; stable marks use the inverse CDF ``|z| = cutoff * U**(-1/alpha)``
    with an independent fair sign.
    """
    T, R = box
    T = check_positive("T", T, allow_zero=True)
    R = check_positive("R", R, allow_zero=True)
    dim = check_dim(dim)
    seed = check_seed(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    rate = spec.total_mass()
    if not math.isfinite(rate):
        raise ConfigError("mark measure has infinite mass above the cutoff")
    mean = T * (2.0 * R) ** dim * rate
    n = int(rng.poisson(mean)) if mean > 0 else 0
    times = rng.uniform(0.0, T, n) if n else np.empty(0)
    positions = rng.uniform(-R, R, (n, dim)) if n else np.empty((0, dim))
    u = rng.random(n)
    if spec.family == STABLE:
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        marks = sign * spec.cutoff * (1.0 - u) ** (-1.0 / spec.alpha)
    else:
        keep = [(a, r) for a, r in zip(spec.atoms, spec.rates) if abs(a) >= spec.cutoff and r > 0]
        values = np.array([a for a, _ in keep])
        cdf = np.cumsum([r for _, r in keep])
        cdf = cdf / cdf[-1] if len(cdf) else cdf
        marks = values[np.minimum(np.searchsorted(cdf, u, side="right"), len(values) - 1)] if n else np.empty(0)
    return NoiseRealization(
        times, positions, marks, T=T, R=R, dim=dim, cutoff=spec.cutoff, seed=seed,
        compensation=spec.compensation(), discarded_mass_bound=spec.discarded_mass_bound(),
        mark_spec=spec,
    )


@dataclass(frozen=True)
class StoppingConfig:
    N: int
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "N", check_int("N", self.N, minimum=1))
        object.__setattr__(self, "eta", check_positive("eta", self.eta))

    def validate(self, q: float, dim: int) -> "StoppingConfig":
        if not self.eta > dim / q:
            raise AdmissibilityError(f"eta={self.eta:g} must exceed d/q = {dim / q:g}")
        return self

    def with_level(self, N: int) -> "StoppingConfig":
        return StoppingConfig(N, self.eta)


def growth(x, eta: float, dim: int) -> np.ndarray:
    """``h(x) = 1 + |x|**eta``."""
    return 1.0 + radius(x, dim) ** eta


def truncate_jump_size(real: NoiseRealization, L: float) -> NoiseRealization:
    """Drop big jumps with ``|z| > L``; small jumps are untouched."""
    L = check_positive("L", L)
    a = np.abs(real.marks)
    return real.subset((a <= 1.0) | (a <= L))


def restrict_support(real: NoiseRealization, L: float) -> NoiseRealization:
    """Drop big jumps located outside ``[-L, L]^d``."""
    L = check_positive("L", L)
    inside = np.all(np.abs(real.positions) <= L, axis=1)
    return real.subset(~real.big | inside)


def _exceeds(real: NoiseRealization, cfg: StoppingConfig) -> np.ndarray:
    return np.abs(real.marks) > cfg.N * growth(real.positions, cfg.eta, real.dim)


def truncate_adaptive(real: NoiseRealization, cfg: StoppingConfig) -> NoiseRealization:
    """Keep only jumps with ``|z| <= N h(x)`` (the noise driving the level-N Picard scheme)."""
    return real.subset(~_exceeds(real, cfg))


def stopping_time(real: NoiseRealization, cfg: StoppingConfig):
    """First atom time with ``|z| > N h(x)``, or :data:`BEYOND_WINDOW`."""
    hit = _exceeds(real, cfg)
    if not hit.any():
        return BEYOND_WINDOW
    return float(real.times[hit].min())


def stabilization_level(real: NoiseRealization, eta: float) -> float:
    """``max |z| / h(x)`` over the cloud: every ``N`` above it leaves the cloud intact."""
    if len(real) == 0:
        return 0.0
    return float(np.max(np.abs(real.marks) / growth(real.positions, eta, real.dim)))


def shell_radius(n: float, dim: int) -> float:
    """Radius of the centred ball of Lebesgue measure ``n`` in R^dim."""
    n = check_positive("n", n, allow_zero=True)
    dim = check_dim(dim)
    return math.pi ** -0.5 * gamma_fn(1.0 + dim / 2.0) ** (1.0 / dim) * n ** (1.0 / dim)


def exceedance_intensity(spec: LevyMarkSpec, cfg: StoppingConfig, box: tuple[float, float], dim: int) -> float:
    """Expected number of atoms in the box with ``|z| > N h(x)``, by quadrature.

    ``P[tau(N) <= T] = 1 - exp(-intensity)`` exactly, and is at most the intensity.
    """
    T, R = box
    dim = check_dim(dim)

    def rate_at(*x):
        a = max(cfg.N * (1.0 + math.sqrt(sum(c * c for c in x)) ** cfg.eta), spec.cutoff)
        return tail_mass(spec, a)

    opts = {"epsabs": 0.0, "epsrel": 1e-11, "limit": 200}
    if dim == 1:
        val = 2.0 * integrate.quad(rate_at, 0.0, R, **opts)[0]
    elif dim == 2:
        val = 4.0 * integrate.nquad(rate_at, [[0.0, R]] * 2, opts=[opts] * 2)[0]
    else:
        loose = {"epsabs": 0.0, "epsrel": 1e-8, "limit": 100}
        val = 8.0 * integrate.nquad(rate_at, [[0.0, R]] * 3, opts=[loose] * 3)[0]
    return T * val


def shell_sum_bound(spec: LevyMarkSpec, cfg: StoppingConfig, box: tuple[float, float], dim: int) -> float:
    """Borel-Cantelli shell bound restricted to shells that meet the box.

    Each unit-volume shell ``U_n`` contributes ``T lambda(|z| > a_n)`` with
    ``a_n = N (1 + r_{n-1}**eta)``, ``r_n`` from :func:`shell_radius`, i.e. the
    growth ``a_n ~ N C (n-1)**(eta/d)`` with the explicit constant
    ``C = shell_radius(1, d)**eta`` plus the ``+1`` in ``h``.
    """
    T, R = box
    corner = R * math.sqrt(dim)
    total = 0.0
    n = 1
    while True:
        r_prev = shell_radius(n - 1, dim)
        if r_prev > corner:
            break
        total += tail_mass(spec, max(cfg.N * (1.0 + r_prev ** cfg.eta), spec.cutoff))
        n += 1
    return T * total


class LevyNoiseSampler(BaseEstimator):
    """Estimator-style front end for :func:`sample_noise`."""

    def __init__(self, mark_spec=None, T=1.0, R=1.0, dim=1):
        self.mark_spec = mark_spec
        self.T = T
        self.R = R
        self.dim = dim

    def sample(self, seed: int) -> NoiseRealization:
        return sample_noise(self.mark_spec, (self.T, self.R), seed, self.dim)

    def sample_ensemble(self, n: int, master_seed: int) -> list[NoiseRealization]:
        return [self.sample(realization_seed(master_seed, i)) for i in range(n)]


class _RealizationTransformer(TransformerMixin, BaseEstimator):
    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        if isinstance(X, NoiseRealization):
            return self._apply(X)
        return [self._apply(r) for r in X]


class JumpSizeTruncation(_RealizationTransformer):
    def __init__(self, level=1.0):
        self.level = level

    def _apply(self, real):
        return truncate_jump_size(real, self.level)


class SupportRestriction(_RealizationTransformer):
    def __init__(self, half_width=1.0):
        self.half_width = half_width

    def _apply(self, real):
        return restrict_support(real, self.half_width)


class AdaptiveTruncation(_RealizationTransformer):
    def __init__(self, N=1, eta=2.0):
        self.N = N
        self.eta = eta

    def _apply(self, real):
        return truncate_adaptive(real, StoppingConfig(self.N, self.eta))
