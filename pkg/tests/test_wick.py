import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from sgflow.nonlinearity import j_array, jk_second_moments, renorm_cauchy_diag, renorm_moment
from sgflow.ou import NoiseSpec, WHITE, ou_cov, sample_z_batch
from sgflow.regularization import RegOperator, coupled_paths
from sgflow.wick import (Factor, bn_cross_covariance, bzeta_cauchy_moment, conjugate_spec,
                         count_matchings, dd3_exp, isserlis_expectation, jk_difference_moment_exact,
                         jk_moment_exact, renorm_cauchy_by_pairings, renorm_moment_by_pairings,
                         square_exp_integral, vanishing_pairings, zeta_norm_moment)
from sgflow.nonlinearity import dot_convolution

SEED = 12345


def test_pairing_counts():
    assert [count_matchings(n) for n in (2, 4, 6, 8)] == [1, 3, 15, 105]
    assert count_matchings(3) == 0


def test_eight_factor_structural_zeros():
    # h1 = m1 + n1, h2 = m2 + n2 on the first copy; conjugated second copy
    conj = [False] * 4 + [True] * 4
    total, zero = vanishing_pairings(conj, [[0, 1], [2, 3], [4, 5], [6, 7]])
    assert (total, zero) == (105, 45)


def test_two_and_four_factor_reductions():
    m, n = (1, 2), (3, -1)
    assert isserlis_expectation([Factor(m, 0.7), Factor(m, 0.4, True)]) == pytest.approx(ou_cov(m, 0.7, 0.4))
    f = [Factor(m, 1.0), Factor(n, 1.0), Factor(m, 1.0, True), Factor(n, 1.0, True)]
    assert isserlis_expectation(f) == pytest.approx(ou_cov(m, 1, 1) * ou_cov(n, 1, 1))
    assert isserlis_expectation(f[:3]) == 0
    g = [Factor(m, 1.0), Factor(m, 1.0), Factor(m, 1.0, True), Factor(m, 1.0, True)]
    assert isserlis_expectation(g).real == pytest.approx(2 * ou_cov(m, 1, 1) ** 2)


modes = st.tuples(st.integers(-3, 3), st.integers(-3, 3)).filter(lambda m: m != (0, 0))


@given(st.lists(st.tuples(modes, st.floats(0.1, 2), st.booleans(), st.complex_numbers(max_magnitude=2)),
                min_size=2, max_size=6))
def test_conjugation_symmetry(items):
    f = [Factor(m, t, c, w) for m, t, c, w in items]
    a = isserlis_expectation(f)
    b = isserlis_expectation(conjugate_spec(f))
    assert b == pytest.approx(np.conj(a), abs=1e-12)


@given(st.lists(st.tuples(modes, st.floats(0.1, 2)), min_size=1, max_size=3))
def test_real_for_conjugation_invariant_products(items):
    f = [Factor(m, t) for m, t in items] + [Factor(m, t, True) for m, t in items]
    assert abs(isserlis_expectation(f).imag) < 1e-12


def test_jk_moment_example():
    assert jk_moment_exact((2, 0), 1, 1.0) == pytest.approx(2 * ((1 - math.exp(-2)) / 2) ** 2, rel=1e-12)
    assert jk_moment_exact((2, 0), 1, 1.0) == pytest.approx(0.37381, abs=1e-4)


def test_pairing_oracle_matches_convolution_path():
    for N, Np in ((2, 4), (3, 5)):
        a = renorm_cauchy_diag(N, Np, 0.5, 1.0)
        b = renorm_cauchy_by_pairings(N, Np, 0.5, 1.0)
        assert a == pytest.approx(b, rel=1e-12)
    assert renorm_moment(3, 0.5, 1.0)[0] == pytest.approx(renorm_moment_by_pairings(3, 0.5, 1.0), rel=1e-12)
    arr = jk_second_moments(4, 0.7, NoiseSpec(beta=0.5))
    K = arr.shape[-1] // 2
    for k in ((1, 0), (2, 3), (0, 0), (-4, 1)):
        assert arr[k[0] + K, k[1] + K] == pytest.approx(jk_moment_exact(k, 4, 0.7, NoiseSpec(beta=0.5)),
                                                        rel=1e-12)


def test_jk_monte_carlo():
    n = 10_000
    z = sample_z_batch(WHITE, 1.0, 4, n, SEED)
    J = j_array(z, 4, "fft")
    K = J.shape[-1] // 2
    for k in ((1, 0), (2, 1)):
        x = np.abs(J[:, k[0] + K, k[1] + K]) ** 2
        assert abs(x.mean() - jk_moment_exact(k, 4, 1.0)) <= 3 * x.std(ddof=1) / math.sqrt(n)
    x = np.abs(J[:, 3 + K, K] - j_array(z, 2, "fft")[:, 3 + 4, 4]) ** 2
    assert abs(x.mean() - jk_difference_moment_exact((3, 0), 2, 4, 1.0)) <= 3 * x.std(ddof=1) / math.sqrt(n)


def test_jk_growth_envelope():
    arr = jk_second_moments(32, 1.0, WHITE, "fft")
    K = arr.shape[-1] // 2
    q = np.add.outer((np.arange(-K, K + 1)) ** 2, (np.arange(-K, K + 1)) ** 2).astype(float)
    sel = (q > 0) & (q <= 256)
    c = arr[sel] * q[sel] / np.log(1 + np.sqrt(q[sel]))
    # one constant covers |k| <= 16 and the scaled values do not drift upward
    assert c.max() < 2.0 * np.median(c)


def test_bn_cross_covariance_trivial_cases():
    p8 = RegOperator.cutoff(8)
    assert bn_cross_covariance(p8, p8, (1, 0), 8, 1.0) == 0.0
    assert bn_cross_covariance(RegOperator.identity(), RegOperator.identity(), (2, 1), 4, 1.0) == 0.0


def test_bn_cross_covariance_monte_carlo():
    phi, psi = RegOperator.cutoff(8), RegOperator.cutoff(4)
    exact = bn_cross_covariance(phi, psi, (1, 0), 8, 1.0)
    n = 4000
    x = np.empty(n)
    for r in range(n):
        _, (zf, zg) = coupled_paths([phi, psi], [1.0], 8, SEED, r, WHITE)
        J = dot_convolution(zf[0] + zg[0], zf[0] - zg[0], "fft")
        K = J.shape[-1] // 2
        x[r] = abs(J[1 + K, K]) ** 2
    assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / math.sqrt(n)


@given(st.floats(-30, 0), st.floats(-30, 0), st.floats(-30, 0))
def test_dd3_symmetric_and_matches_formula(a, b, c):
    v = float(dd3_exp(np.array([a]), np.array([b]), np.array([c]))[0])
    perm = float(dd3_exp(np.array([c]), np.array([a]), np.array([b]))[0])
    assert v == pytest.approx(perm, rel=1e-9, abs=1e-300)
    # the second divided difference of exp lies between exp(min)/2 and exp(max)/2
    assert 0.5 * math.exp(min(a, b, c)) * (1 - 1e-9) <= v <= 0.5 * math.exp(max(a, b, c)) * (1 + 1e-9)


@pytest.mark.parametrize("alpha,beta,delta,c", [(-1.0, -2.0, -0.5, 0.3), (2.0, 0.0, -3.0, -2.0),
                                                (0.0, 0.0, 0.0, 0.0), (-5.0, -5.0, -1e-9, -1.0)])
def test_square_exp_integral_vs_quadrature(alpha, beta, delta, c):
    t = 0.9
    f = lambda s2, s: math.exp(c * t + alpha * s + beta * s2 + delta * abs(s - s2))
    ref = (integrate.dblquad(f, 0, t, 0, lambda s: s, epsabs=1e-13, epsrel=1e-11)[0]
           + integrate.dblquad(f, 0, t, lambda s: s, t, epsabs=1e-13, epsrel=1e-11)[0])
    got = float(square_exp_integral(np.array(alpha), np.array(beta), np.array(delta), np.array(c), t))
    assert got == pytest.approx(ref, rel=1e-8)


def test_time_integrated_moments_frozen_values():
    spec = NoiseSpec(beta=0.8)
    assert zeta_norm_moment(8, 1.1, 1.0, spec) == pytest.approx(7.664, rel=1e-3)
    assert bzeta_cauchy_moment(1, 0.6, 1.0, spec) == pytest.approx(2.197, rel=1e-3)
    assert bzeta_cauchy_moment(2, 0.6, 1.0, spec) == pytest.approx(6.681, rel=1e-3)
