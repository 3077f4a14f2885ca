from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fullinfo.likelihood import exact_joint_loglik_toy, macro_loglik
from fullinfo.models import LinearGaussianToy, StylizedHousehold, simulate_joint
from fullinfo.momentbased import (MomentSeries, MomentVcv, NonPSDError, central_moments,
                                  chi2_moment_distribution_test, group_central_moments, moment_block,
                                  moment_loglik, moment_series, moment_vcv, vcv_from_series)


# -- sample moments ------------------------------------------------------------------

def test_small_example():
    m = group_central_moments({0: [1.0, 2.0, 3.0]}, 3)[0]
    assert np.allclose(m, [2.0, 2.0 / 3.0, 0.0], atol=1e-15)


def test_constants_have_zero_central_moments():
    m = central_moments(np.full(7, 4.2), 6)
    assert m[0] == pytest.approx(4.2)
    assert np.allclose(m[1:], 0.0, atol=1e-24)


def test_empty_group_rejected():
    with pytest.raises(ValueError):
        group_central_moments({0: [1.0], 1: []})


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_matches_direct_recomputation(v):
    got = central_moments(v, 4)
    n = len(v)
    mu = sum(v) / n
    ref = [mu] + [sum((a - mu) ** k for a in v) / n for k in (2, 3, 4)]
    assert np.allclose(got, ref, rtol=1e-9, atol=1e-7)
    assert got[1] >= 0


def test_moment_series_household_groups():
    h = StylizedHousehold()
    _, _, micro = simulate_joint(h, None, 6, [3, 6], 200, 1)
    s = moment_series(micro, h)
    assert s.times == (3, 6) and s.groups == (0, 1)
    assert s.moments.shape == (2, 2, 3) and s.higher.shape == (2, 2, 6)
    assert np.all(s.counts.sum(axis=1) == 200)
    blk = micro[3]
    iota0 = np.asarray(blk["iota"])[np.asarray(blk["eps"]) == 0]
    assert np.allclose(s.moments[0, 0], central_moments(iota0, 3))


# -- vcv ---------------------------------------------------------------------------

def test_vcv_standard_normal_example():
    v = moment_vcv([[0.0, 1.0, 0.0, 3.0, 0.0, 15.0]], [100])
    assert np.array_equal(v.matrix, np.diag([0.01, 0.02, 0.06]))
    assert not v.repaired


def test_vcv_block_diagonal_and_halving():
    m = np.array([[1.0, 2.0, 0.5, 13.0, 4.0, 130.0], [0.3, 1.0, -0.2, 3.5, -1.0, 17.0]])
    a = moment_vcv(m, [50, 80]).matrix
    b = moment_vcv(m, [100, 160]).matrix
    assert np.allclose(a[:3, 3:], 0.0) and np.allclose(a[3:, :3], 0.0)
    assert np.allclose(b, a / 2, rtol=1e-14, atol=0)
    assert np.allclose(a, a.T)


def influence_vcv(support, probs):
    """Asymptotic covariance of (mean, m2, m3) from influence functions, in exact arithmetic."""
    mu = sum(p * x for x, p in zip(support, probs))
    m2 = sum(p * (x - mu) ** 2 for x, p in zip(support, probs))
    m3 = sum(p * (x - mu) ** 3 for x, p in zip(support, probs))

    def psi(x):
        d = x - mu
        return [d, d * d - m2, d ** 3 - m3 - 3 * m2 * d]

    V = [[Fraction(0)] * 3 for _ in range(3)]
    for x, p in zip(support, probs):
        f = psi(x)
        for i in range(3):
            for j in range(3):
                V[i][j] += p * f[i] * f[j]
    cm = [mu] + [sum(p * (x - mu) ** k for x, p in zip(support, probs)) for k in range(2, 7)]
    return V, cm


@pytest.mark.parametrize("support,probs", [
    ([Fraction(0), Fraction(1)], [Fraction(3, 4), Fraction(1, 4)]),
    ([Fraction(-1), Fraction(0), Fraction(5, 2)], [Fraction(1, 5), Fraction(1, 2), Fraction(3, 10)]),
    ([Fraction(1), Fraction(2), Fraction(7)], [Fraction(1, 3)] * 3),
])
def test_vcv_formulas_on_rational_inputs(support, probs):
    V, cm = influence_vcv(support, probs)
    got = moment_block([float(c) for c in cm], 1.0)
    ref = np.array([[float(V[i][j]) for j in range(3)] for i in range(3)])
    assert np.allclose(got, ref, rtol=1e-13, atol=1e-14)


def test_vcv_monte_carlo_skewed():
    # gamma(4, 1): central moments from the cumulants k_n = 4 (n-1)!
    k = 4.0
    k2, k3, k4, k5, k6 = k, 2 * k, 6 * k, 24 * k, 120 * k
    m = [k, k2, k3, k4 + 3 * k2 ** 2, k5 + 10 * k3 * k2,
         k6 + 15 * k4 * k2 + 10 * k3 ** 2 + 15 * k2 ** 3]
    N, reps = 1000, 2000
    rng = np.random.default_rng(3)
    stats_ = np.array([central_moments(rng.gamma(k, size=N), 3) for _ in range(reps)])
    emp = np.cov(stats_.T)
    ref = moment_vcv([m], [N]).matrix
    assert np.allclose(emp, ref, rtol=0.2)


def test_vcv_psd_repair_and_failure():
    # exactly zero variance in the third-moment direction: clipped, not an error
    v = moment_vcv([[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]], [10])
    assert v.repaired
    assert np.linalg.eigvalsh(v.matrix).min() > 0
    with pytest.raises(NonPSDError):
        moment_vcv([[0.0, 1.0, 0.0, 0.5, 0.0, 1.0]], [10])


def test_vcv_rejects_bad_input():
    with pytest.raises(ValueError):
        moment_vcv([[0.0, 1.0, 0.0, 3.0, 0.0]], [10])
    with pytest.raises(ValueError):
        moment_block([0.0, 1.0, 0.0, 3.0, 0.0, 15.0], 0)


# -- moment likelihood ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_sim():
    toy = LinearGaussianToy()
    _, x, micro = simulate_joint(toy, None, 20, [5, 10, 15, 20], 50, 11)
    s = moment_series(micro, toy)
    return toy, x, micro, s


def exact_toy_vcv(toy, N):
    su2 = toy.calibration["sigma_u"] ** 2
    return moment_vcv([[0.0, su2, 0.0, 3 * su2 ** 2, 0.0, 15 * su2 ** 3]], [N])


def test_empty_observation_set_is_macro(toy_sim):
    toy, x, _, s = toy_sim
    empty = MomentSeries((), (0,), np.zeros((0, 1, 3)), np.zeros((0, 1, 6)), np.zeros((0, 1)))
    for order in (1, 2, 3):
        got = moment_loglik(None, x, empty, exact_toy_vcv(toy, 50), toy, order)
        assert got == pytest.approx(macro_loglik(None, x, toy), abs=1e-10)


def test_giant_variance_rows_reduce_to_macro(toy_sim):
    toy, x, _, s = toy_sim
    big = MomentVcv(1e12 * np.eye(3), ())
    for order in (1, 2, 3):
        ll = moment_loglik(None, x, s, big, toy, order)
        const = 0.5 * order * len(s.times) * np.log(2 * np.pi * 1e12)
        assert ll + const == pytest.approx(macro_loglik(None, x, toy), abs=1e-6)


def test_order_one_is_sufficient_in_toy(toy_sim):
    toy, x, micro, s = toy_sim
    vcv = exact_toy_vcv(toy, 50)
    diffs = [moment_loglik([r], x, s, vcv, toy, 1) - exact_joint_loglik_toy([r], x, micro, toy)
             for r in np.linspace(-0.9, 0.95, 9)]
    assert np.ptp(diffs) < 1e-8


def test_inflated_vcv_lowers_likelihood():
    h = StylizedHousehold()
    _, x, micro = simulate_joint(h, None, 40, [10, 20, 30, 40], 1000, 5)
    s = moment_series(micro, h)
    v = vcv_from_series(s)
    inflated = MomentVcv(100 * v.matrix, v.blocks)
    for order in (1, 2, 3):
        assert moment_loglik(None, x, s, v, h, order) > moment_loglik(None, x, s, inflated, h, order)


def test_order_validation(toy_sim):
    toy, x, _, s = toy_sim
    with pytest.raises(ValueError):
        moment_loglik(None, x, s, exact_toy_vcv(toy, 50), toy, 4)


# -- chi-squared law --------------------------------------------------------------------------

def test_chi2_law_small_N():
    assert chi2_moment_distribution_test(5, 2.0, 10_000, 1, "chi2").pvalue > 0.01
    assert chi2_moment_distribution_test(5, 2.0, 10_000, 1, "normal").pvalue < 0.01


def test_normal_approximation_large_N():
    assert chi2_moment_distribution_test(500, 1.0, 2_000, 2, "normal").pvalue > 0.01


def test_chi2_rejects_bad_input():
    with pytest.raises(ValueError):
        chi2_moment_distribution_test(1, 1.0, 10, 0)
    with pytest.raises(ValueError):
        chi2_moment_distribution_test(5, 1.0, 10, 0, against="t")
