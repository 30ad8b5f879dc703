import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgflow.bounds import (bilinear_adjoint, bsquare_constant_probe, bsquare_ratio, cmixed_constant_probe,
                           cmixed_ratio, envelope, probe_trend, sumsum_array, sumsum_bound_check, sumsum_lhs)
from sgflow.nonlinearity import bilinear_array
from sgflow.spectral import random_field, resize

SEED = 12345


def test_sumsum_lhs_converges_in_shell():
    a = sumsum_lhs(3, 3, (1, 0), 64)
    b = sumsum_lhs(3, 3, (1, 0), 128)
    assert abs(b["value"] - a["value"]) < 1e-3 * a["value"]
    assert b["value"] - a["value"] <= a["tail_bound"]


def test_sumsum_preconditions():
    with pytest.raises(ValueError):
        sumsum_lhs(1, 1, (1, 0), 64)
    with pytest.raises(ValueError):
        sumsum_lhs(3, 3, (0, 0), 64)
    with pytest.raises(ValueError):
        sumsum_lhs(3, 3, (20, 0), 64)


@given(st.integers(-6, 6), st.integers(-6, 6))
def test_sumsum_reflection_symmetry(a, b):
    if (a, b) == (0, 0):
        return
    assert sumsum_lhs(2.5, 1.5, (a, b), 40)["value"] == sumsum_lhs(2.5, 1.5, (-a, -b), 40)["value"]


def test_sumsum_exponent_swap_symmetry():
    S = sumsum_array(2.5, 1.5, 8, 32, n_shell=32)
    T = sumsum_array(1.5, 2.5, 8, 32, n_shell=32)
    assert np.max(np.abs(S - T)) <= 1e-12 * np.max(S)


def test_fft_lattice_sum_matches_direct():
    S = sumsum_array(3, 3, 8, 64)
    for k in ((1, 0), (3, 2), (-5, 4)):
        assert S[k[0] + 8, k[1] + 8] == pytest.approx(sumsum_lhs(3, 3, k, 64)["value"], rel=1e-10)


@pytest.mark.parametrize("alpha,gamma", [(3, 3), (2, 2), (1.5, 2)])
def test_bound_check_passes(alpha, gamma):
    rep = sumsum_bound_check(alpha, gamma, 32)
    assert rep["verdict"] == "PASS"
    half = sumsum_bound_check(alpha, gamma, 16)
    assert abs(rep["C"] - half["C"]) <= 0.10 * half["C"]


def test_envelope_branches():
    assert envelope(3, 3, 1.0) == pytest.approx(2.0 ** -3)
    assert envelope(2, 2, 1.0) == pytest.approx(2.0 ** -2 * np.log(2))
    assert envelope(1.5, 2, 3.0) == pytest.approx(4.0 ** -1.5 * np.log(4))


def test_adjoint_identity(rng):
    u1 = random_field(6, rng, 1.0)
    u2 = random_field(6, rng, 1.0)
    w = random_field(12, rng, 1.0)
    B = bilinear_array(u1, u2, "fft")
    lhs = np.vdot(w, resize(B, 12))
    rhs = np.vdot(bilinear_adjoint(w, u2, 6), u1)
    assert lhs == pytest.approx(rhs, rel=1e-10)


@given(st.integers(0, 2**31), st.floats(0.1, 10))
def test_ratios_homogeneous(seed, lam):
    r = np.random.default_rng(seed)
    u1 = random_field(4, r, 3.2)
    u2 = random_field(4, r, 3.2)
    a = bsquare_ratio(u1, u2, 0.5, 0.5, 0.5)
    assert bsquare_ratio(lam * u1, u2, 0.5, 0.5, 0.5) == pytest.approx(a, rel=1e-10)
    assert bsquare_ratio(2 * u1, u2, 0.5, 0.5, 0.5) == pytest.approx(a, rel=1e-12)
    c = cmixed_ratio(u1, u2, 0.9, 8, 0.5, 0.5, G=16)
    assert cmixed_ratio(u1, lam * u2, 0.9, 8, 0.5, 0.5, G=16) == pytest.approx(c, rel=1e-10)


def test_zero_fields_skipped():
    z = np.zeros((9, 9), dtype=complex)
    u = random_field(4, np.random.default_rng(0), 3.2)
    assert np.isnan(cmixed_ratio(z, u, 0.9, 8, 0.5, 0.5, G=16))
    assert np.isnan(bsquare_ratio(u, z, 0.5, 0.5, 0.5))


def test_probes_deterministic_and_margins():
    a = bsquare_constant_probe(0.5, 0.5, 0.5, 8, 2, SEED)
    assert a == bsquare_constant_probe(0.5, 0.5, 0.5, 8, 2, SEED)
    with pytest.raises(ValueError):
        bsquare_constant_probe(0.1, 0.1, 0.1, 8, 2, SEED)
    with pytest.raises(ValueError):
        cmixed_constant_probe(0.5, 8, 0.5, 0.5, 8, 2, SEED)
    with pytest.raises(ValueError):
        cmixed_constant_probe(0.9, 8, 0.5, 0.5, 8, 2, SEED, G=8)


def test_probe_trend():
    t = probe_trend([1.0, 1.05, 1.04])
    assert t["stable"] and not t["growing"]
    assert probe_trend([1.0, 1.5, 2.4])["growing"]


def test_bsquare_probe_stability_and_negative_control():
    good = [bsquare_constant_probe(0.5, 0.5, 0.5, K, 4, SEED) for K in (8, 16)]
    bad = [bsquare_constant_probe(0.1, 0.1, 0.1, K, 4, SEED, check_margin=False) for K in (8, 16)]
    assert probe_trend(good)["stable"]
    assert probe_trend(bad)["growing"]
