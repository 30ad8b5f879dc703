import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from sgflow.spectral import (SpectralField, frac_power_apply, hs_norm, project_galerkin, random_field,
                             semigroup_apply, to_grid, wsp_norm_estimate)


def field(seed, K=6, decay=2.0):
    return SpectralField(random_field(K, np.random.default_rng(seed), decay))


def test_hs_norm_examples():
    assert hs_norm(SpectralField.zeros(4), 1.3) == 0.0
    assert hs_norm(SpectralField.from_modes({(1, 0): 1.0}), 2) == pytest.approx(math.sqrt(2))
    assert hs_norm(SpectralField.from_modes({(1, 1): 1.0}), 1) == pytest.approx(2.0)


def test_construction_rejects_bad_fields():
    c = np.zeros((5, 5), dtype=complex)
    c[2, 2] = 1.0
    with pytest.raises(ValueError):
        SpectralField(c)
    c = np.zeros((5, 5), dtype=complex)
    c[3, 2] = 1.0
    with pytest.raises(ValueError):
        SpectralField(c)
    with pytest.raises(ValueError):
        SpectralField.from_modes({(0, 0): 1.0})


def test_semigroup_examples():
    u = SpectralField.from_modes({(1, 1): 1.0}, 3)
    assert semigroup_apply(u, 0.25).coeff(1, 1) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert np.array_equal(semigroup_apply(u, 0.0).coeffs, u.coeffs)
    with pytest.raises(ValueError):
        semigroup_apply(u, -1.0)


@given(st.integers(0, 2**31), st.floats(0, 0.05), st.floats(0, 0.05), st.floats(-1, 2))
def test_semigroup_law_and_contraction(seed, t, s, sig):
    u = field(seed)
    ab = semigroup_apply(semigroup_apply(u, t), s).coeffs
    assert np.allclose(ab, semigroup_apply(u, t + s).coeffs, rtol=1e-12, atol=1e-14)
    assert hs_norm(semigroup_apply(u, t), sig) <= hs_norm(u, sig) * (1 + 1e-12)


def test_smoothing_constant():
    # t^{sigma/4} |k|^sigma e^{-t|k|^4} <= sup_x x^{sigma/4} e^{-x}
    sigma = 1.5
    bound = (sigma / 4) ** (sigma / 4) * math.exp(-sigma / 4)
    worst = 0.0
    for seed in range(20):
        u = field(seed, 8)
        for t in np.geomspace(1e-4, 1.0, 15):
            r = t ** (sigma / 4) * hs_norm(semigroup_apply(u, t), 0.5 + sigma) / hs_norm(u, 0.5)
            worst = max(worst, r)
    assert worst <= bound * (1 + 1e-12)
    assert worst > 0.5 * bound


def test_frac_power():
    u = SpectralField.from_modes({(2, 0): 1.0}, 3)
    assert frac_power_apply(u, 0.5).coeff(2, 0) == pytest.approx(4.0)
    v = field(3)
    assert np.array_equal(frac_power_apply(v, 0.0).coeffs, v.coeffs)
    back = frac_power_apply(frac_power_apply(v, 0.7), -0.7).coeffs
    assert np.allclose(back, v.coeffs, rtol=1e-12, atol=0)


def test_project_galerkin():
    u = SpectralField.from_modes({(3, 4): 1.0, (1, 0): 2.0}, 5)
    p = project_galerkin(u, 4)
    assert p.coeff(3, 4) == 0 and p.coeff(1, 0) == 2.0
    v = field(5, 6)
    assert np.array_equal(project_galerkin(v, 6 * math.sqrt(2)).coeffs, v.coeffs)
    once = project_galerkin(v, 4.5)
    assert np.array_equal(project_galerkin(once, 4.5).coeffs, once.coeffs)


def test_to_grid_cosine_and_parseval():
    G = 32
    assert not np.any(to_grid(SpectralField.zeros(3), G))
    u = SpectralField.from_modes({(1, 0): math.pi}, 2)
    x = -math.pi + 2 * math.pi * np.arange(G) / G
    U = to_grid(u, G)
    assert np.max(np.abs(U - np.cos(x)[:, None])) < 1e-10
    v = field(11, 8)
    l2 = (2 * math.pi / G) ** 2 * np.sum(to_grid(v, G) ** 2)
    assert l2 == pytest.approx(hs_norm(v, 0) ** 2, rel=1e-8)


def test_wsp_zero_and_translation():
    assert wsp_norm_estimate(SpectralField.zeros(3), 0.5, 2, 16) == 0.0
    u = SpectralField.from_modes({(1, 0): 0.5}, 2)
    # a y-translation leaves the +-(1,0) coefficients unchanged; an off-grid
    # x-translation only rotates their phase and must not change the estimate
    w = SpectralField.from_modes({(1, 0): 0.5 * np.exp(1j * 0.3)}, 2)
    assert wsp_norm_estimate(w, 0.5, 2, 32) == pytest.approx(wsp_norm_estimate(u, 0.5, 2, 32), rel=1e-12)


def _gagliardo_multiplier(k1, s):
    """int over the torus of 2(1 - cos(k1 h1)) / |h|^{2+2s}, by quadrature (periodic distance)."""
    f = lambda h2, h1: 2 * (1 - math.cos(k1 * h1)) / (h1 * h1 + h2 * h2) ** (1 + s)
    val, _ = integrate.dblquad(f, 0, math.pi, 0, math.pi, epsabs=1e-10, epsrel=1e-8)
    return 4 * val


@pytest.mark.parametrize("G", [64, 128])
def test_wsp_p2_matches_fourier_multiplier(G):
    s = 0.5
    u = SpectralField.from_modes({(1, 0): 0.5}, 2)
    exact = math.sqrt(2 * 0.25 * (1 + _gagliardo_multiplier(1, s)))
    assert wsp_norm_estimate(u, s, 2, G) == pytest.approx(exact, rel=0.02)


def test_wsp_converges_in_grid():
    u = field(2, 4, decay=6.0)
    vals = [wsp_norm_estimate(u, 0.5, 2, G) for G in (32, 64, 128)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


def test_wsp_preconditions():
    u = SpectralField.from_modes({(1, 0): 0.5}, 2)
    with pytest.raises(ValueError):
        wsp_norm_estimate(u, 1.0, 2, 32)
    with pytest.raises(ValueError):
        wsp_norm_estimate(u, 0.5, 2, 4)
