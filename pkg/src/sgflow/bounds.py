"""Brute-force checks of the lattice convolution-sum estimate and of the bilinear bounds.

Everything here is numerical evidence with fitted constants and negative
controls, calibrated against the stated envelopes; nothing is a proof.
"""
from __future__ import annotations

import math

import numpy as np

from .nonlinearity import bilinear_array, convolve_modes
from .ou import replica_rng
from .spectral import (SpectralField, ball_mask, box_radius, hermitize, hs_norm_sq_array, kpow, ksq,
                       random_field, resize, wavenumbers, wsp_norm_estimate)

# coefficient law of the probe fields: E|u_k|^2 = |k|^{-3.2}
PROBE_DECAY = 3.2


def _check_exponents(alpha: float, gamma: float):
    if alpha <= 0 or gamma <= 0:
        raise ValueError("exponents must be positive")
    if alpha + gamma <= 2:
        raise ValueError("need alpha + gamma > 2 for the sum to converge")


def sumsum_array(alpha: float, gamma: float, k_range: int, shell: int,
                 n_shell: float | None = None) -> np.ndarray:
    """S(k) = sum_{m+n=k, m,n != 0, |m| <= shell} |m|^{-alpha} |n|^{-gamma} for |k| <= k_range.

    With n_shell the second index is restricted to |n| <= n_shell as well.
    Returned on the box of half-width k_range (zero outside the ball and at 0).
    Evaluated as one zero-padded FFT convolution of nonnegative arrays.
    """
    Km = int(shell)
    fa = kpow(Km, -alpha) * ball_mask(Km, shell)
    Kn = Km + int(k_range) if n_shell is None else box_radius(n_shell)
    fg = kpow(Kn, -gamma)
    if n_shell is not None:
        fg = fg * ball_mask(Kn, n_shell)
    full = convolve_modes(fa, fg, "fft")
    out = resize(full, int(k_range)) * ball_mask(int(k_range), k_range)
    out[k_range, k_range] = 0.0
    return np.clip(out, 0.0, None)


def _tail_bound(alpha: float, gamma: float, k_norm: float, shell: float) -> float:
    """Integral-comparison bound for the terms with |m| > shell.

    There |n| >= |m| - |k| >= 3|m|/4 (shell >= 4|k|), and each lattice term is
    dominated by the integral over its unit cell, giving
    1.31 (4/3)^gamma 2 pi (shell - 1.42)^{2 - p} / (p - 2), p = alpha + gamma.
    """
    p = alpha + gamma
    return 1.31 * (4.0 / 3.0) ** gamma * 2.0 * math.pi * (shell - 1.42) ** (2.0 - p) / (p - 2.0)


def sumsum_lhs(alpha: float, gamma: float, k, shell: int) -> dict:
    """Partial sum over |m| <= shell at one k, with a tail bound for the remainder."""
    _check_exponents(alpha, gamma)
    k1, k2 = int(k[0]), int(k[1])
    kn = math.hypot(k1, k2)
    if kn == 0:
        raise ValueError("k must be nonzero")
    if shell < 4 * kn:
        raise ValueError("shell must be at least 4|k|")
    K = int(shell)
    m1 = np.arange(-K, K + 1)[:, None]
    m2 = np.arange(-K, K + 1)[None, :]
    qm = (m1 * m1 + m2 * m2).astype(float)
    qn = ((k1 - m1) ** 2 + (k2 - m2) ** 2).astype(float)
    ok = (qm > 0) & (qn > 0) & (qm <= shell * shell)
    # fsum is correctly rounded, so the value does not depend on summation order (k and -k agree exactly)
    val = math.fsum(qm[ok] ** (-0.5 * alpha) * qn[ok] ** (-0.5 * gamma))
    return {"value": val, "tail_bound": _tail_bound(alpha, gamma, kn, shell), "shell": shell}


def envelope(alpha: float, gamma: float, k_norm, d: int = 2):
    """(1+|k|)^{-b} with b = min(alpha, gamma, alpha + gamma - d), times log(1+|k|) if alpha or gamma equals d."""
    b = min(alpha, gamma, alpha + gamma - d)
    k_norm = np.asarray(k_norm, dtype=float)
    env = (1.0 + k_norm) ** (-b)
    if math.isclose(alpha, d) or math.isclose(gamma, d):
        env = env * np.log(1.0 + k_norm)
    return env


def sumsum_bound_check(alpha: float, gamma: float, k_range: int = 32, shell: int | None = None,
                       start: float = 8.0, rtol: float = 1e-3) -> dict:
    """Ratio of the lattice sum to its envelope for all 0 < |k| <= k_range.

    The fitted constant C is the largest ratio.  The ratio sequence is the
    shell-wise maximum over k_r <= |k| < k_r + 1; the verdict is PASS when it
    is non-increasing for |k| beyond `start` (up to rtol relative, which
    absorbs the direction-dependent lattice scatter).  The shell defaults to
    8 k_range; the reported tail bound shows how little the cut-off leaves.
    """
    _check_exponents(alpha, gamma)
    shell = 8 * k_range if shell is None else shell
    if shell < 4 * k_range:
        raise ValueError("shell must be at least 4 k_range")
    S = sumsum_array(alpha, gamma, k_range, shell)
    q = ksq(k_range)
    kn = np.sqrt(q)
    live = (q > 0) & (kn <= k_range)
    ratio = np.zeros_like(S)
    ratio[live] = S[live] / envelope(alpha, gamma, kn[live])
    radii = np.arange(1, k_range + 1)
    seq = np.array([ratio[live & (kn >= r) & (kn < r + 1)].max() for r in radii])
    tail = seq[radii >= start]
    monotone = bool(np.all(tail[1:] <= tail[:-1] * (1.0 + rtol)))
    return {
        "alpha": alpha, "gamma": gamma, "k_range": k_range, "shell": shell,
        "C": float(ratio[live].max()),
        "radii": radii.tolist(), "ratios": seq.tolist(),
        "tail_bound": _tail_bound(alpha, gamma, 1.0, shell),
        "verdict": "PASS" if monotone else "FAIL",
    }


# ---------------------------------------------------------------------------
# bilinear constant probes


def _probe_pair(K: int, rng):
    u1 = random_field(K, rng, PROBE_DECAY)
    u2 = random_field(K, rng, PROBE_DECAY)
    return u1, u2


def _b_norm(u1, u2, gamma: float) -> float:
    return math.sqrt(float(hs_norm_sq_array(bilinear_array(u1, u2, "fft"), -2.0 - gamma)))


def bsquare_ratio(u1: np.ndarray, u2: np.ndarray, alpha: float, beta: float, gamma: float) -> float:
    """||B(u1,u2)||_{H^{-2-gamma}} / (||u1||_{H^{1+alpha}} ||u2||_{H^{1+beta}}); nan for a zero field."""
    d = math.sqrt(float(hs_norm_sq_array(u1, 1.0 + alpha)) * float(hs_norm_sq_array(u2, 1.0 + beta)))
    if d == 0:
        return float("nan")
    return _b_norm(u1, u2, gamma) / d


def bilinear_adjoint(w: np.ndarray, u2: np.ndarray, K: int) -> np.ndarray:
    """Adjoint of u1 -> B(u1, u2) (plain l^2 pairing), returned on the box of half-width K.

    (B^H w)_m = sum_n (m.n) |m+n|^2 conj(u2_n) w_{m+n}, which for Hermitian u2
    equals -sum_j m_j (n_j u2 * |k|^2 w)_m with * the mode convolution.
    """
    n1, n2 = wavenumbers(u2.shape[-1] // 2)
    m1, m2 = wavenumbers(K)
    wt = ksq(w.shape[-1] // 2) * w
    c1 = resize(convolve_modes(n1 * u2, wt, "fft"), K)
    c2 = resize(convolve_modes(n2 * u2, wt, "fft"), K)
    return -(m1 * c1 + m2 * c2)


def _linear_sup(u_fixed: np.ndarray, start: np.ndarray, s_free: float, gamma: float,
                iters: int) -> np.ndarray:
    """Power iteration for sup_u ||B(u, u_fixed)||_{H^{-2-gamma}} / ||u||_{H^{s_free}}.

    Works in x = |k|^{s_free} u so that the denominator is the l^2 norm; the
    iterates stay Hermitian because the map commutes with conjugate reflection.
    """
    K = start.shape[-1] // 2
    W = kpow(K, s_free)
    Winv = kpow(K, -s_free)
    Wo = kpow(2 * K, -2.0 - gamma)
    x = W * start
    for _ in range(iters):
        y = Wo * bilinear_array(Winv * x, u_fixed, "fft")
        x = hermitize(Winv * bilinear_adjoint(Wo * y, u_fixed, K))
        nx = np.linalg.norm(x)
        if nx == 0:
            return start
        x = x / nx
    return Winv * x


def bsquare_constant_probe(alpha: float, beta: float, gamma: float, K: int, draws: int,
                           seed: int, check_margin: bool = True, rounds: int = 3,
                           iters: int = 20) -> float:
    """Sup of the H^{1+alpha} x H^{1+beta} -> H^{-2-gamma} ratio at cutoff K.

    Each random draw (coefficient variance |k|^{-3.2}) starts an alternating
    ascent: with one factor fixed the ratio is a linear operator norm, found by
    power iteration, then the roles swap.  Raw Gaussian draws alone are
    dominated by phase cancellation and decay with K whatever the exponents,
    so they cannot expose a violated hypothesis.  rounds = 0 reports the raw
    draws.  Requires alpha + beta + gamma >= 1.05 unless check_margin is False
    (the negative control).
    """
    if check_margin and alpha + beta + gamma < 1.05:
        raise ValueError("need alpha + beta + gamma >= 1 + 0.05")
    best = 0.0
    for j in range(draws):
        u1, u2 = _probe_pair(K, replica_rng(seed, j, 7))
        for _ in range(rounds):
            u1 = _linear_sup(u2, u1, 1.0 + alpha, gamma, iters)
            u2 = _linear_sup(u1, u2, 1.0 + beta, gamma, iters)
        r = bsquare_ratio(u1, u2, alpha, beta, gamma)
        if np.isfinite(r):
            best = max(best, r)
    return best


def cmixed_ratio(u1: np.ndarray, u2: np.ndarray, alpha: float, q: float, epsilon: float,
                 gamma: float, G: int = 64) -> float:
    """||B(u1,u2)||_{H^{-2-gamma}} / (||u1||_{W^{alpha,q}} ||u2||_{H^{1+epsilon}}); nan for a zero field."""
    n2 = math.sqrt(float(hs_norm_sq_array(u2, 1.0 + epsilon)))
    if n2 == 0 or not np.any(u1):
        return float("nan")
    n1 = wsp_norm_estimate(SpectralField(u1, check=False), alpha, q, G)
    return _b_norm(u1, u2, gamma) / (n1 * n2)


def cmixed_constant_probe(alpha: float, q: float, epsilon: float, gamma: float, K: int,
                          draws: int, seed: int, G: int = 64, check_margin: bool = True,
                          rounds: int = 3, iters: int = 20) -> float:
    """Sup of the W^{alpha,q} x H^{1+epsilon} -> H^{-2-gamma} ratio at cutoff K.

    Alternating ascent from each random draw: u2 goes to the exact linear
    supremum for the current u1; u1, whose W^{alpha,q} norm is not quadratic,
    is pushed to the supremum in the embedding proxy H^{1 + alpha - 2/q}.  Every
    intermediate pair is a valid test pair, so the largest true ratio seen is
    reported.  Requires 1 - alpha + 2/q + 0.05 <= min(epsilon, gamma).
    """
    if check_margin and 1.0 - alpha + 2.0 / q + 0.05 > min(epsilon, gamma):
        raise ValueError("need 1 - alpha + 2/q < min(epsilon, gamma) with margin 0.05")
    if G < 2 * K:
        raise ValueError("grid must have G >= 2K")
    proxy = 1.0 + alpha - 2.0 / q
    best = 0.0

    def keep(u1, u2):
        r = cmixed_ratio(u1, u2, alpha, q, epsilon, gamma, G)
        return max(best, r) if np.isfinite(r) else best

    for j in range(draws):
        u1, u2 = _probe_pair(K, replica_rng(seed, j, 8))
        best = keep(u1, u2)
        for _ in range(rounds):
            u2 = _linear_sup(u1, u2, 1.0 + epsilon, gamma, iters)
            best = keep(u1, u2)
            u1 = _linear_sup(u2, u1, proxy, gamma, iters)
            best = keep(u1, u2)
        if rounds:
            u2 = _linear_sup(u1, u2, 1.0 + epsilon, gamma, iters)
            best = keep(u1, u2)
    return best


def probe_trend(values) -> dict:
    """Relative change between consecutive K-doublings; stable when every change stays within 10%."""
    v = np.asarray(values, dtype=float)
    changes = (v[1:] - v[:-1]) / v[:-1]
    return {"values": v.tolist(), "changes": changes.tolist(),
            "stable": bool(np.all(np.abs(changes) <= 0.10)),
            "growing": bool(np.all(changes > 0.10))}
