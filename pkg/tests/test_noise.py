import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from spde_heavy.exceptions import AdmissibilityError, ConfigError
from spde_heavy.noise import (
    BEYOND_WINDOW,
    AdaptiveTruncation,
    JumpSizeTruncation,
    LevyMarkSpec,
    LevyNoiseSampler,
    NoiseRealization,
    StoppingConfig,
    SupportRestriction,
    exceedance_intensity,
    moment_integral,
    realization_seed,
    restrict_support,
    sample_noise,
    shell_radius,
    shell_sum_bound,
    splitmix64,
    stabilization_level,
    stopping_time,
    tail_mass,
    truncate_adaptive,
    truncate_jump_size,
)

STABLE = LevyMarkSpec.symmetric_stable(1.2, 1.0, 0.1)


def test_splitmix64_reference_vector():
    # first output of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_realization_seeds_distinct_and_stable():
    seeds = [realization_seed(7, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert seeds[:3] == [realization_seed(7, 0), realization_seed(7, 1), realization_seed(7, 2)]
    assert realization_seed(7, 0) != realization_seed(8, 0)


def test_sentinel_orders_above_all_times():
    assert BEYOND_WINDOW > 1e300 and not BEYOND_WINDOW < 5.0
    assert sorted([BEYOND_WINDOW, 0.3, 0.1])[-1] is BEYOND_WINDOW


def test_jump_rate_of_stable_measure():
    # lambda(|z| >= eps) = 2 c eps**(-alpha) / alpha
    assert STABLE.total_mass() == pytest.approx(2 * 0.1 ** -1.2 / 1.2, rel=1e-14)
    assert LevyMarkSpec.symmetric_stable(1.5, 2.0, 0.5).total_mass() == pytest.approx(2 * 2 * 0.5 ** -1.5 / 1.5)


def test_mean_atom_count_reference():
    # T=1, R=1, d=1, alpha=1.5, scale=1, cutoff=0.1: volume 2 times (2/1.5) * 0.1**-1.5
    spec = LevyMarkSpec.symmetric_stable(1.5, 1.0, 0.1)
    assert 2 * spec.total_mass() == pytest.approx(84.3274042711568, rel=1e-12)


@pytest.mark.parametrize("region,e", [("small", 1.3), ("small", 1.9), ("big", 0.5), ("big", 1.1)])
def test_moment_integral_quadrature(region, e):
    f = lambda z: 2 * z ** e * z ** (-1 - 1.2)
    if region == "small":
        val = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-12, limit=200)[0]
    else:
        val = integrate.quad(f, 1, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    assert moment_integral(STABLE, e, region) == pytest.approx(val, rel=1e-8)


def test_moment_integral_divergent_cases():
    assert moment_integral(STABLE, 1.2, "small") == math.inf
    assert moment_integral(STABLE, 1.2, "big") == math.inf
    with pytest.raises(ConfigError):
        moment_integral(STABLE, 1.0, "middle")


def test_discrete_moments_and_rates():
    spec = LevyMarkSpec.discrete([-0.5, 2.0, 0.05], [1.0, 0.5, 3.0], cutoff=0.1)
    assert moment_integral(spec, 2.0, "small") == pytest.approx(0.25 + 3 * 0.05 ** 2)
    assert moment_integral(spec, 1.0, "big") == pytest.approx(1.0)
    assert spec.total_mass() == pytest.approx(1.5)
    assert tail_mass(spec, 0.5) == pytest.approx(0.5)
    assert tail_mass(spec, 0.5, inclusive=True) == pytest.approx(1.5)


def test_declared_exponents_are_enforced():
    with pytest.raises(AdmissibilityError):
        LevyMarkSpec.symmetric_stable(1.2, p=1.1, q=1.0)  # small jumps need p > alpha
    with pytest.raises(AdmissibilityError):
        LevyMarkSpec.symmetric_stable(1.2, p=1.3, q=1.25)  # big jumps need q < alpha
    LevyMarkSpec.symmetric_stable(1.2, p=1.3, q=1.1)
    with pytest.raises(AdmissibilityError):
        LevyMarkSpec.discrete([0.5], [1.0], drift=0.3, p=0.8, q=0.8)  # p < 1 needs zero b0


def test_compensation_conventions():
    spec = LevyMarkSpec.discrete([0.5, -2.0], [2.0, 1.0], drift=0.4, p=1.5, q=1.0)
    comp = spec.compensation()
    assert comp["convention"] == "compensated"
    assert comp["effective_drift"] == pytest.approx(0.4 - 1.0)
    zero_b0 = LevyMarkSpec.discrete([0.5], [2.0], drift=1.0, p=0.8, q=0.8)
    assert zero_b0.compensation()["convention"] == "uncompensated"
    assert STABLE.discarded_mass_bound() is None
    assert LevyMarkSpec.symmetric_stable(1.2, cutoff=0.1, p=1.5, q=1.0).discarded_mass_bound() == \
        pytest.approx(2 * 0.1 ** 0.3 / 0.3)


def test_sampling_is_deterministic():
    a = sample_noise(STABLE, (0.5, 3.0), 11, dim=2)
    b = sample_noise(STABLE, (0.5, 3.0), 11, dim=2)
    assert a.same_atoms(b)
    assert not a.same_atoms(sample_noise(STABLE, (0.5, 3.0), 12, dim=2))


def test_sampling_support_and_cutoff():
    real = sample_noise(STABLE, (0.5, 3.0), 3, dim=2)
    assert len(real) > 0
    assert np.all((real.times >= 0) & (real.times <= 0.5))
    assert np.all(np.abs(real.positions) <= 3.0)
    assert np.all(np.abs(real.marks) >= 0.1)
    with pytest.raises(ValueError):
        real.marks[0] = 1.0


def test_empty_window():
    real = sample_noise(STABLE, (0.0, 2.0), 1)
    assert len(real) == 0
    assert stopping_time(real, StoppingConfig(1, 2.0)) is BEYOND_WINDOW


def test_discrete_marks_take_listed_values():
    spec = LevyMarkSpec.discrete([-0.5, 2.0, 0.05], [1.0, 0.5, 3.0], cutoff=0.1)
    real = sample_noise(spec, (10.0, 5.0), 5)
    assert set(np.unique(real.marks)) <= {-0.5, 2.0}
    frac = np.mean(real.marks == 2.0)
    assert frac == pytest.approx(1 / 3, abs=0.05)


def test_poisson_counts_small_ensemble():
    counts = np.array([len(sample_noise(STABLE, (0.2, 1.0), realization_seed(5, i))) for i in range(2000)])
    mean = 0.2 * 2 * STABLE.total_mass()
    assert counts.mean() == pytest.approx(mean, rel=0.02)
    assert counts.var() == pytest.approx(mean, rel=0.1)


def test_stable_marks_follow_pareto_tail():
    real = sample_noise(STABLE, (5.0, 5.0), 9)
    a = np.abs(real.marks)
    # P(|Z| > z | |Z| >= eps) = (z/eps)**(-alpha)
    res = stats.kstest(a, lambda z: 1 - (np.maximum(z, 0.1) / 0.1) ** -1.2)
    assert res.pvalue > 0.01
    assert abs(np.mean(real.marks > 0) - 0.5) < 0.05


def test_truncations_keep_small_jumps():
    real = NoiseRealization.from_atoms(
        [[0.1, 0.0, 0.5], [0.2, 3.0, 5.0], [0.3, -0.5, -3.0], [0.4, 4.0, 0.2]], T=1, R=5)
    assert len(truncate_jump_size(real, 1.0)) == 2
    assert len(truncate_jump_size(real, 4.0)) == 3
    assert len(restrict_support(real, 1.0)) == 3
    assert len(restrict_support(real, 5.0)) == 4


def test_adaptive_truncation_and_stopping_time():
    real = NoiseRealization.from_atoms(
        [[0.3, 0.0, 1.5], [0.1, 2.0, 4.0], [0.2, 1.0, -1.9]], T=1, R=5)
    cfg = StoppingConfig(1, 2.0)
    # thresholds: h(0)=1, h(2)=5, h(1)=2
    kept = truncate_adaptive(real, cfg)
    assert np.array_equal(kept.marks, [4.0, -1.9])
    assert stopping_time(real, cfg) == 0.3
    assert stopping_time(real, cfg.with_level(2)) is BEYOND_WINDOW
    assert stabilization_level(real, 2.0) == pytest.approx(1.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 63), st.integers(1, 3))
def test_stopping_time_monotone_in_level(seed, dim):
    real = sample_noise(STABLE, (0.5, 2.0), seed, dim)
    taus = [stopping_time(real, StoppingConfig(N, 2.5)) for N in (1, 2, 3, 5, 8)]
    assert all(a <= b for a, b in zip(taus, taus[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 63), st.floats(0.5, 50.0), st.floats(0.5, 50.0))
def test_jump_truncation_nested(seed, L1, L2):
    real = sample_noise(STABLE, (0.5, 2.0), seed)
    lo, hi = sorted((L1, L2))
    small = set(map(tuple, truncate_jump_size(real, lo).atom_rows()))
    big = set(map(tuple, truncate_jump_size(real, hi).atom_rows()))
    assert small <= big


def test_stopping_config_validation():
    with pytest.raises(AdmissibilityError):
        StoppingConfig(1, 0.8).validate(q=1.1, dim=1)
    StoppingConfig(1, 1.0).validate(q=1.1, dim=1)
    with pytest.raises(ConfigError):
        StoppingConfig(0, 2.0)


def test_shell_radius_volumes():
    assert shell_radius(2.0, 1) == pytest.approx(1.0)
    assert math.pi * shell_radius(3.0, 2) ** 2 == pytest.approx(3.0)
    assert 4 / 3 * math.pi * shell_radius(5.0, 3) ** 3 == pytest.approx(5.0)


def test_exceedance_intensity_closed_form_one_dim():
    cfg = StoppingConfig(3, 2.0)
    # T * 2 int_0^R (2c/alpha) (N (1 + x^2))^(-alpha) dx
    f = lambda x: 2 / 1.2 * (3 * (1 + x * x)) ** -1.2
    expected = 0.5 * 2 * integrate.quad(f, 0, 2.0, epsrel=1e-12)[0]
    assert exceedance_intensity(STABLE, cfg, (0.5, 2.0), 1) == pytest.approx(expected, rel=1e-10)


def test_exceedance_intensity_multi_dim_by_monte_carlo():
    cfg = StoppingConfig(2, 3.0)
    rng = np.random.Generator(np.random.PCG64(0))
    x = rng.uniform(-1.5, 1.5, (200_000, 2))
    h = 1 + np.linalg.norm(x, axis=1) ** 3.0
    mc = 0.5 * 9.0 * np.mean(2 / 1.2 * (2 * h) ** -1.2)
    assert exceedance_intensity(STABLE, cfg, (0.5, 1.5), 2) == pytest.approx(mc, rel=5e-3)


def test_shell_sum_dominates_intensity():
    for N in (1, 2, 4):
        cfg = StoppingConfig(N, 2.0)
        assert shell_sum_bound(STABLE, cfg, (0.5, 3.0), 1) >= exceedance_intensity(STABLE, cfg, (0.5, 3.0), 1)


def test_estimator_wrappers():
    sampler = LevyNoiseSampler(STABLE, T=0.5, R=2.0)
    assert sampler.get_params()["T"] == 0.5
    reals = sampler.sample_ensemble(3, master_seed=4)
    assert [r.seed for r in reals] == [realization_seed(4, i) for i in range(3)]
    real = reals[0]
    assert JumpSizeTruncation(level=2.0).fit_transform(real).same_atoms(truncate_jump_size(real, 2.0))
    assert SupportRestriction(half_width=1.0).transform(real).same_atoms(restrict_support(real, 1.0))
    cfg = StoppingConfig(1, 2.0)
    assert AdaptiveTruncation(N=1, eta=2.0).transform(real).same_atoms(truncate_adaptive(real, cfg))
