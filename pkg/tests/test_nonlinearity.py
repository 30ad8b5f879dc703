import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgflow.nonlinearity import (bilinear_B, bilinear_B_truncated, bilinear_array, convolve_modes,
                                 hnorm_sq_of_bilinear_from_j, j_array, j_coefficients,
                                 jk_second_moments, renorm_cauchy_diag, renorm_moment,
                                 square_projected)
from sgflow.ou import WHITE, sample_z_batch
from sgflow.spectral import SpectralField, hs_norm, ksq, project_galerkin, random_field, reflect, resize

SEED = 12345
seeds = st.integers(0, 2**31)


def field(seed, K=5):
    return SpectralField(random_field(K, np.random.default_rng(seed), 2.0))


def test_single_mode_square():
    u = SpectralField.from_modes({(1, 0): 1.0}, 1)
    out = bilinear_B(u, u)
    K = out.K
    expect = np.zeros_like(out.coeffs)
    expect[2 + K, K] = expect[-2 + K, K] = 4.0
    assert np.allclose(out.coeffs, expect, atol=1e-14)
    assert np.allclose(bilinear_B_truncated(u, u, 1).coeffs, out.coeffs, atol=1e-14)


@given(seeds, seeds, st.floats(-3, 3))
def test_bilinear_symmetry_and_scaling(a, b, lam):
    u, v = field(a), field(b)
    uv, vu = bilinear_B(u, v).coeffs, bilinear_B(v, u).coeffs
    assert np.allclose(uv, vu, atol=1e-12)
    assert np.allclose(uv, np.conj(reflect(uv)), atol=1e-12)
    assert np.allclose(bilinear_B(u * lam, v).coeffs, lam * uv, atol=1e-11)
    assert abs(uv[uv.shape[0] // 2, uv.shape[0] // 2]) == 0.0


@given(seeds)
def test_fft_path_matches_direct(a):
    u = random_field(6, np.random.default_rng(a), 1.0)
    v = random_field(4, np.random.default_rng(a + 1), 1.0)
    d = convolve_modes(u, v, "direct")
    f = convolve_modes(u, v, "fft")
    assert np.max(np.abs(d - f)) < 1e-10


@given(seeds, st.floats(1, 6))
def test_truncated_support_and_identity(a, N):
    u = field(a)
    out = bilinear_B_truncated(u, u, N).coeffs
    K = out.shape[0] // 2
    assert not np.any(np.abs(out[ksq(K) > (2 * N) ** 2]) > 0)
    J = j_array(u.coeffs, N)
    Kj = J.shape[-1] // 2
    assert np.allclose(resize(out, Kj), ksq(Kj) * J * (ksq(Kj) > 0), atol=1e-12)
    full = bilinear_B_truncated(u, u, 5 * math.sqrt(2)).coeffs
    assert np.allclose(resize(full, 10), resize(bilinear_B(u, u).coeffs, 10), atol=1e-12)


def test_j_coefficients_examples():
    z = SpectralField.from_modes({(1, 0): 1.0}, 1)
    J = j_coefficients(z, 1)
    assert J[(2, 0)] == pytest.approx(1.0) and J[(-2, 0)] == pytest.approx(1.0)
    assert J[(0, 0)] == pytest.approx(-2.0)


@given(seeds, st.floats(1, 5))
def test_j0_is_minus_gradient_energy(a, N):
    z = field(a)
    J = j_coefficients(z, N)
    assert J[(0, 0)].real == pytest.approx(-hs_norm(project_galerkin(z, N), 1) ** 2, rel=1e-12, abs=1e-14)
    arr = j_array(z.coeffs, N)
    assert np.allclose(arr, np.conj(reflect(arr)), atol=1e-12)


def test_square_projected_matches_padded_convolution(rng):
    w = random_field(8, rng, 1.0)
    a = square_projected(w, 8)
    b = resize(bilinear_array(w, w, "fft"), 8)
    assert np.max(np.abs(a - b)) < 1e-14 * np.max(np.abs(b))


def test_renorm_cauchy_values():
    assert renorm_cauchy_diag(4, 4, 0.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        renorm_cauchy_diag(8, 4, 0.5, 1.0)
    d = [renorm_cauchy_diag(N, 2 * N, 0.5, 1.0) for N in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(d, d[1:]))
    for i in (1, 2):
        assert d[i + 1] / d[i] <= 2 ** -0.5 * 1.25


def test_renorm_cauchy_monte_carlo():
    n = 10_000
    z = sample_z_batch(WHITE, 1.0, 8, n, SEED)
    big = j_array(z, 8, "fft")
    small = resize(j_array(z, 4, "fft"), big.shape[-1] // 2)
    x = hnorm_sq_of_bilinear_from_j(big - small, 0.5)
    se = x.std(ddof=1) / math.sqrt(n)
    assert abs(x.mean() - renorm_cauchy_diag(4, 8, 0.5, 1.0)) <= 3 * se


def test_renorm_moment_second_monte_carlo_and_fourth_bound():
    n = 10_000
    z = sample_z_batch(WHITE, 1.0, 8, n, SEED)
    x = hnorm_sq_of_bilinear_from_j(j_array(z, 8, "fft"), 0.5)
    exact, kind = renorm_moment(8, 0.5, 1.0)
    assert kind == "exact"
    assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / math.sqrt(n)
    bound, kind = renorm_moment(8, 0.5, 1.0, p=4)
    assert kind == "bound" and np.mean(x ** 2) <= bound
    with pytest.raises(ValueError):
        renorm_moment(8, 0.5, 1.0, p=3)


def test_jk_second_moments_fft_matches_direct():
    a = jk_second_moments(6, 1.0, WHITE, "direct")
    b = jk_second_moments(6, 1.0, WHITE, "fft")
    assert np.max(np.abs(a - b)) < 1e-10 * np.max(np.abs(a))
