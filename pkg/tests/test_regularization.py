import math

import numpy as np
import pytest

from sgflow.bounds import sumsum_array
from sgflow.ou import WHITE, correlated_increment, hermitian_normal, replica_rng
from sgflow.regularization import (RegOperator, admissibility_check, convergence_experiment_B,
                                   convergence_experiment_z, coupled_paths, family_from_dict, gram_table,
                                   konsist_bounds, mode_list, mollifier_eigenvalues, mollifier_operator,
                                   operator_from_dict, or2_condition_sum, z_tail_oracle)

SEED = 12345
inv_norm = RegOperator.diagonal(lambda a, b: 1.0 / np.sqrt(np.maximum(a * a + b * b, 1)), name="inv")
inv_sqrt = RegOperator.diagonal(lambda a, b: (np.maximum(a * a + b * b, 1)) ** -0.25, name="invsqrt")


def test_gram_examples():
    modes = mode_list(2)
    assert np.allclose(gram_table(RegOperator.identity(), modes=modes).matrix, np.eye(len(modes)))
    assert gram_table(inv_norm, modes=modes)[(2, 0), (2, 0)] == pytest.approx(0.25)
    assert gram_table(inv_norm, modes=modes)[(2, 0), (1, 0)] == 0


def test_mollifier_diagonal_and_kernel_forms_agree():
    op = mollifier_operator(4.0)
    kern = RegOperator.from_diagonal_as_kernel(op, 4.0)
    modes = mode_list(4.0)
    a = gram_table(op, modes=modes).matrix
    b = gram_table(kern, modes=modes).matrix
    assert np.max(np.abs(a - b)) < 1e-10


@pytest.mark.parametrize("op", [RegOperator.identity(), RegOperator.cutoff(3), inv_norm,
                                mollifier_operator(3.0)])
def test_gram_hermitian_psd(op):
    g = gram_table(op, modes=mode_list(4))
    assert g.is_hermitian() and g.min_eigenvalue() >= -1e-9


def test_kernel_realness_enforced():
    modes = [(1, 0), (-1, 0)]
    with pytest.raises(ValueError):
        RegOperator.kernel(np.array([[1j, 0], [0, 1j]]), modes)
    with pytest.raises(ValueError):
        RegOperator.kernel(np.eye(1), [(1, 0)])


def test_admissibility_verdicts():
    ks = [(1, 0), (2, 1)]
    assert admissibility_check(RegOperator.cutoff(8), ks)["verdict"] == "PASS"
    assert admissibility_check(RegOperator.identity(), ks)["verdict"] == "FAIL"
    assert admissibility_check(inv_sqrt, ks)["verdict"] == "PASS"


def test_or2_condition():
    assert or2_condition_sum(lambda N: RegOperator.cutoff(N), 0.5)["verdict"] == "PASS"
    assert or2_condition_sum(lambda N: RegOperator.identity(), 0.5)["verdict"] == "PASS"
    rep = or2_condition_sum(lambda N: mollifier_operator(N), 0.5)
    assert rep["verdict"] == "PASS" and set(rep["tables"]) == {"difference", "gram"}


def test_konsist_bounds():
    cut = lambda N: RegOperator.cutoff(N)
    assert konsist_bounds(cut, cut, 0.5)["verdict"] == "PASS"
    bounded = lambda m, n: np.ones(np.broadcast_shapes(m.shape, n.shape)[:-1])
    assert konsist_bounds(None, None, 0.5, shells=(2, 3, 4), c=bounded)["verdict"] == "PASS"
    cube = lambda m, n: np.hypot(m[..., 0], m[..., 1]) ** 3 + 0 * n[..., 0]
    assert konsist_bounds(None, None, 0.5, shells=(2, 3, 4), c=cube)["verdict"] == "FAIL"


def test_bounded_c_inner_sum_matches_lattice_sum():
    # inner sum of the first condition with c = 1 is sum_{m+n=k} |m|^-3 |n|^-3
    R = 8.0
    modes = np.array(mode_list(R))
    n = np.hypot(modes[:, 0], modes[:, 1])
    inner = {}
    for i, m in enumerate(modes):
        for j, q in enumerate(modes):
            k = tuple(m + q)
            inner[k] = inner.get(k, 0.0) + n[i] ** -3 * n[j] ** -3
    S = sumsum_array(3, 3, 5, R, n_shell=R)
    for k in ((1, 0), (2, 1), (3, 3)):
        assert inner[k] == pytest.approx(S[k[0] + 5, k[1] + 5], rel=1e-10)


def test_mollifier_eigenvalues():
    assert abs(mollifier_eigenvalues("cosine", 64, [(1, 0)])[(1, 0)] - 1) < 0.01
    vals = mollifier_eigenvalues("smooth", 4, [(j, 0) for j in (1, 4, 8, 16)])
    mags = [abs(v) for v in vals.values()]
    assert all(b < a for a, b in zip(mags, mags[1:]))
    ev = mollifier_operator(4.0).eigenvalues(6)
    assert np.max(np.abs(ev.imag)) < 1e-10


def test_operator_dict_round_trip():
    for op in (RegOperator.identity(), RegOperator.cutoff(5), mollifier_operator(3.0, "smooth")):
        back = operator_from_dict(op.to_dict())
        assert np.allclose(back.eigenvalues(5), op.eigenvalues(5))
    kern = RegOperator.from_diagonal_as_kernel(mollifier_operator(2.0), 2.0)
    back = operator_from_dict(kern.to_dict())
    assert np.allclose(back.M, kern.M)
    assert family_from_dict({"kind": "cutoff"})(4).N == 4
    with pytest.raises(ValueError):
        operator_from_dict({"kind": "nope"})


def test_cutoff_family_gram_limits_exact():
    modes = mode_list(4)
    for N in (4, 8):
        g = gram_table(RegOperator.cutoff(N), modes=modes).matrix
        assert np.array_equal(g, np.eye(len(modes)))


def test_diagonal_increment_paths_coincide():
    K = 3
    modes = [(a, b) for a in range(-K, K + 1) for b in range(-K, K + 1) if (a, b) != (0, 0)]
    g = gram_table(inv_norm, modes=modes)
    inc = correlated_increment(g, 0.01, replica_rng(SEED, 0))
    direct = math.sqrt(0.01) * np.conj(inv_norm.eigenvalues(K)) * hermitian_normal(K, replica_rng(SEED, 0))
    got = np.array([inc[m] for m in modes])
    ref = np.array([direct[a + K, b + K] for a, b in modes])
    assert np.max(np.abs(got - ref)) < 1e-14


def test_coupled_paths_identity_and_cutoff_exact():
    times = np.linspace(0.1, 1.0, 10)
    z, (zi, zc) = coupled_paths([RegOperator.identity(), RegOperator.cutoff(4)], times, 8, SEED, 0)
    assert np.array_equal(zi, z)
    K = 8
    q = np.add.outer(np.arange(-K, K + 1) ** 2, np.arange(-K, K + 1) ** 2)
    assert np.array_equal(zc[:, q <= 16], z[:, q <= 16]) and not np.any(zc[:, q > 16])


def test_convergence_z():
    times = np.linspace(0.1, 1.0, 10)
    cut = lambda N: RegOperator.cutoff(N)
    rows = convergence_experiment_z(cut, [4, 8, 16], 0.25, 2, times, 200, SEED)
    for r in rows:
        assert abs(r["estimate"] - r["exact"]) <= 3 * r["stderr"]
    est = [r["estimate"] for r in rows]
    se = [r["stderr"] for r in rows]
    assert all(est[i] - est[i + 1] > 2 * math.hypot(se[i], se[i + 1]) for i in range(2))
    ident = convergence_experiment_z(lambda N: RegOperator.identity(), [4], 0.25, 2, times, 5, SEED)
    assert ident[0]["estimate"] == 0.0 and ident[0]["exact"] == 0.0
    assert rows[0]["exact"] == pytest.approx(z_tail_oracle(4, 0.25, times, 32))


def test_convergence_B():
    times = np.linspace(0.1, 1.0, 5)
    same = convergence_experiment_B(lambda N: RegOperator.cutoff(N), lambda N: RegOperator.cutoff(N),
                                    [4], 0.5, times)
    assert same[0]["exact"] == 0.0
    rows = convergence_experiment_B(lambda N: mollifier_operator(N), lambda N: RegOperator.cutoff(N),
                                    [4, 8, 16], 0.5, times)
    ex = [r["exact"] for r in rows]
    assert all(b < a for a, b in zip(ex, ex[1:]))


@pytest.mark.slow
def test_convergence_B_monte_carlo():
    times = np.linspace(0.2, 1.0, 5)
    row = convergence_experiment_B(lambda N: mollifier_operator(N), lambda N: RegOperator.cutoff(N),
                                   [4], 0.5, times, mc_replicas=2000, seed=SEED)[0]
    assert abs(row["estimate"] - row["exact"]) <= 3 * row["stderr"]
