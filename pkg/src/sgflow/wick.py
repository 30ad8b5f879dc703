"""Exact Gaussian moments of OU mode products by enumerating Isserlis pairings.

A MomentSpec is an ordered list of factors z_m(t) or conj z_m(t), each with
an optional complex weight.  Pair covariances follow from the mode-matching
rules

    E[z_m(t) conj z_n(s)] = delta_{m,n} C_m(t,s)
    E[z_m(t) z_n(s)]      = delta_{m,-n} C_m(t,s)

with C_m the OU covariance.  Nothing about fourth moments is hard-coded:
E|z|^4 = 2 (E|z|^2)^2 comes out of the enumeration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nonlinearity import convolve_modes
from .ou import NoiseSpec, WHITE, ou_cov, ou_cov_array
from .spectral import box_radius

MAX_FACTORS = 10


@dataclass(frozen=True)
class Factor:
    mode: tuple
    time: float
    conj: bool = False
    weight: complex = 1.0


def perfect_matchings(n: int):
    """Yield every perfect matching of range(n) as a list of index pairs."""
    def rec(items):
        if not items:
            yield []
            return
        first = items[0]
        for j in range(1, len(items)):
            pair = (first, items[j])
            rest = items[1:j] + items[j + 1:]
            for tail in rec(rest):
                yield [pair] + tail
    if n % 2:
        return
    yield from rec(list(range(n)))


def count_matchings(n: int) -> int:
    return sum(1 for _ in perfect_matchings(n))


def pair_matches(f: Factor, g: Factor) -> bool:
    """Mode-matching rule: does E[f g] survive the delta constraint?"""
    if f.conj != g.conj:
        return tuple(f.mode) == tuple(g.mode)
    return f.mode[0] + g.mode[0] == 0 and f.mode[1] + g.mode[1] == 0


def pair_covariance(f: Factor, g: Factor, noise: NoiseSpec = WHITE, cov=None) -> float:
    if not pair_matches(f, g):
        return 0.0
    if cov is not None:
        return cov(f.mode, f.time, g.time)
    return ou_cov(f.mode, f.time, g.time, noise)


def isserlis_expectation(factors, noise: NoiseSpec = WHITE, cov=None) -> complex:
    """E[prod of factors] by summing over all perfect matchings.

    `cov(mode, t, s)` may override the OU covariance (it receives the mode of
    the first factor in the pair).  Odd factor counts give 0; more than ten
    factors are refused.
    """
    factors = list(factors)
    n = len(factors)
    if n > MAX_FACTORS:
        raise ValueError(f"at most {MAX_FACTORS} factors supported")
    if n % 2:
        return 0j
    weight = complex(np.prod([f.weight for f in factors])) if factors else 1.0
    total = 0.0
    for matching in perfect_matchings(n):
        prod = 1.0
        for i, j in matching:
            c = pair_covariance(factors[i], factors[j], noise, cov)
            if c == 0.0:
                prod = 0.0
                break
            prod *= c
        total += prod
    return weight * total


def conjugate_spec(factors):
    """Globally conjugated product: conj z_m becomes z_m and weights are conjugated."""
    return [Factor(f.mode, f.time, not f.conj, complex(f.weight).conjugate()) for f in factors]


def vanishing_pairings(conj_flags, zero_sum_groups, trials: int = 4, seed: int = 0):
    """Count pairings that vanish for every generic mode assignment.

    `conj_flags[i]` says whether factor i is conjugated; `zero_sum_groups` lists
    index groups whose mode sums must be nonzero (e.g. m + n = h with h != 0).
    For each pairing, the delta constraints are solved by giving each pair a
    random large integer mode; the pairing is structurally zero when every such
    assignment forces one of the group sums to vanish.
    Returns (total pairings, vanishing count).
    """
    rng = np.random.default_rng(seed)
    n = len(conj_flags)
    total = zero = 0
    for matching in perfect_matchings(n):
        total += 1
        dead = True
        for _ in range(trials):
            modes = [None] * n
            for i, j in matching:
                v = rng.integers(-10**6, 10**6, size=2)
                modes[i] = v
                modes[j] = v if conj_flags[i] != conj_flags[j] else -v
            if all(np.any(sum(modes[i] for i in grp) != 0) for grp in zero_sum_groups):
                dead = False
                break
        zero += dead
    return total, zero


def _pairs_for(k, N):
    k1, k2 = int(k[0]), int(k[1])
    R = box_radius(N)
    out = []
    for a in range(-R, R + 1):
        for b in range(-R, R + 1):
            if not 0 < a * a + b * b <= N * N:
                continue
            c, d = k1 - a, k2 - b
            if 0 < c * c + d * d <= N * N:
                out.append(((a, b), (c, d)))
    return out


def _annulus_pairs(k, N, Nprime):
    big = _pairs_for(k, Nprime)
    lim = N * N
    return [(m, n) for m, n in big
            if max(m[0] ** 2 + m[1] ** 2, n[0] ** 2 + n[1] ** 2) > lim]


def _second_moment_by_pairings(pairs, t, noise):
    """sum over (m,n), (m',n') of (m.n)(m'.n') E[z_m z_n conj z_m' conj z_n'].

    Candidate partners (m', n') are pruned to those that can match at least
    one pairing, then each term goes through isserlis_expectation.
    """
    by_pair = {}
    for m, n in pairs:
        by_pair.setdefault((m, n), 0)
    self_paired = [(m, n) for m, n in pairs if m[0] + n[0] == 0 and m[1] + n[1] == 0]
    total = 0.0
    for m, n in pairs:
        w = m[0] * n[0] + m[1] * n[1]
        if w == 0:
            continue
        cands = {(m, n), (n, m)}
        if m[0] + n[0] == 0 and m[1] + n[1] == 0:
            cands.update(self_paired)
        for mp, np_ in cands:
            if (mp, np_) not in by_pair:
                continue
            wp = mp[0] * np_[0] + mp[1] * np_[1]
            if wp == 0:
                continue
            spec = [Factor(m, t), Factor(n, t), Factor(mp, t, True), Factor(np_, t, True)]
            total += w * wp * isserlis_expectation(spec, noise).real
    return total


def jk_moment_exact(k, N: float, t: float, noise: NoiseSpec = WHITE) -> float:
    """E|J_k^N(t)|^2 assembled term by term from pairing enumeration."""
    return float(_second_moment_by_pairings(_pairs_for(k, N), t, noise))


def jk_difference_moment_exact(k, N: float, Nprime: float, t: float,
                               noise: NoiseSpec = WHITE) -> float:
    """E|J_k^N - J_k^N'|^2 from pairing enumeration over the annulus pairs."""
    return float(_second_moment_by_pairings(_annulus_pairs(k, N, Nprime), t, noise))


def renorm_cauchy_by_pairings(N: float, Nprime: float, gamma: float, t: float,
                              noise: NoiseSpec = WHITE) -> float:
    """Same quantity as nonlinearity.renorm_cauchy_diag, via pairing enumeration."""
    R = box_radius(2 * Nprime)
    total = 0.0
    for a in range(-R, R + 1):
        for b in range(-R, R + 1):
            q = a * a + b * b
            if q == 0:
                continue
            pairs = _annulus_pairs((a, b), N, Nprime)
            if pairs:
                total += q ** (-gamma) * _second_moment_by_pairings(pairs, t, noise)
    return total


def renorm_moment_by_pairings(N: float, gamma: float, t: float,
                              noise: NoiseSpec = WHITE) -> float:
    """sum_{k != 0} |k|^{-2 gamma} jk_moment_exact(k, N, t)."""
    R = box_radius(2 * N)
    total = 0.0
    for a in range(-R, R + 1):
        for b in range(-R, R + 1):
            q = a * a + b * b
            if q:
                total += q ** (-gamma) * jk_moment_exact((a, b), N, t, noise)
    return total


# ---------------------------------------------------------------------------
# two regularisations driven by the same cylindrical Wiener process


def _drive_cov_matrix(H, lam, t):
    """Gamma[i, j] = H[i, j] (1 - e^{-(lam_i + lam_j) t}) / (lam_i + lam_j)."""
    s = lam[:, None] + lam[None, :]
    return H * (-np.expm1(-s * t)) / s


def bn_cross_covariance(phi, psi, k, N: float, t: float, gamma: float | None = None) -> float:
    """Exact E|hat J_k|^2 for z^+ = z^Phi + z^Psi, z^- = z^Phi - z^Psi.

    hat J_k = sum_{m+n=k} (m.n) z^+_m z^-_n, so that
    B(z^Phi, z^Phi) - B(z^Psi, z^Psi) = sum_k |k|^2 hat J_k e_k.  The mode
    sums run over 0 < |m|, |n| <= N; `phi` and `psi` are RegOperators.
    Three pairing classes contribute (self-paired, direct, exchanged); pair
    covariances are E[z^a_m conj z^b_l] = <X^b e_l, X^a e_m> int_0^t
    e^{-(t-s)(|m|^4+|l|^4)} ds with X^{+-} = Phi +- Psi.  With `gamma` the
    result is multiplied by |k|^{-2 gamma}.
    """
    from .regularization import mode_list
    modes = mode_list(N)
    if tuple(k) == (0, 0):
        raise ValueError("k must be nonzero")
    Qp = phi.matrix(modes)
    Qs = psi.matrix(modes)
    if Qp.shape != Qs.shape:
        raise ValueError("operators act on different mode sets")
    Xp, Xm = Qp + Qs, Qp - Qs
    lam = np.array([float((a * a + b * b) ** 2) for a, b in modes])
    # H^{ab}[i, j] = <X^b e_j, X^a e_i> = sum_r X^b[r, j] conj X^a[r, i]
    H = {(a, b): (Xa.conj().T @ Xb) for a, Xa in (("+", Xp), ("-", Xm))
         for b, Xb in (("+", Xp), ("-", Xm))}
    G = {key: _drive_cov_matrix(val, lam, t) for key, val in H.items()}
    index = {m: i for i, m in enumerate(modes)}
    im, in_, w = [], [], []
    for m in modes:
        n = (k[0] - m[0], k[1] - m[1])
        if n in index:
            im.append(index[m])
            in_.append(index[n])
            w.append(m[0] * n[0] + m[1] * n[1])
    if not im:
        return 0.0
    im, in_, w = np.array(im), np.array(in_), np.array(w, dtype=float)
    neg = np.array([index[(-a, -b)] for a, b in modes])
    # E[z^+_m z^-_n] = E[z^+_m conj z^-_{-n}]
    t1 = abs(np.sum(w * G[("+", "-")][im, neg[in_]])) ** 2
    t2 = w @ (G[("+", "+")][np.ix_(im, im)] * G[("-", "-")][np.ix_(in_, in_)]) @ w
    # E[z^+_{m1} conj z^-_{n2}] E[z^-_{n1} conj z^+_{m2}]
    t3 = w @ (G[("+", "-")][np.ix_(im, in_)] * G[("-", "+")][np.ix_(in_, im)]) @ w
    val = float((t1 + t2 + t3).real)
    if gamma is not None:
        val *= (k[0] ** 2 + k[1] ** 2) ** (-gamma)
    return val


def bn_moment_array(phi, psi, N: float, t: float, noise: NoiseSpec = WHITE) -> np.ndarray:
    """E|hat J_k|^2 for every k at once, for two diagonal operators.

    With Phi e_m = phi_m e_m the coupled modes are z^Phi_m = conj(phi_m) z_m,
    so only the pairings m_1 = m_2 (direct) and m_1 = n_2 (exchanged) survive
    for k != 0 and both reduce to convolutions.  Modes are restricted to
    0 < |m| <= N.  Output lives on the box of half-width 2 floor(N).
    """
    from .nonlinearity import galerkin_restrict
    from .spectral import wavenumbers
    if not (phi.is_diagonal and psi.is_diagonal):
        raise ValueError("bn_moment_array needs diagonal operators")
    Kn = max(box_radius(N), 1)
    C = galerkin_restrict(ou_cov_array(Kn, t, t, noise), N)
    xp = phi.eigenvalues(Kn) + psi.eigenvalues(Kn)
    xm = phi.eigenvalues(Kn) - psi.eigenvalues(Kn)
    gpp = (np.abs(xp) ** 2) * C
    gmm = (np.abs(xm) ** 2) * C
    gpm = np.conj(xp) * xm * C
    m1, m2 = wavenumbers(Kn)

    def quad(a, b):
        # sum_{m+n=k} (m.n)^2 a_m b_n
        return (convolve_modes(m1 * m1 * a, m1 * m1 * b) + 2.0 * convolve_modes(m1 * m2 * a, m1 * m2 * b)
                + convolve_modes(m2 * m2 * a, m2 * m2 * b))

    out = quad(gpp, gmm) + quad(gpm, np.conj(gpm))
    K2 = out.shape[-1] // 2
    # self-paired term, only at k = 0: |sum_m (m.(-m)) E z^+_m z^-_{-m}|^2
    out[K2, K2] += abs(np.sum(-(m1 * m1 + m2 * m2) * gpm)) ** 2
    return out.real


def bn_norm_moment(phi, psi, N: float, gamma: float, t: float,
                   noise: NoiseSpec = WHITE) -> float:
    """sum_{k != 0} |k|^{-2 gamma} E|hat J_k|^2, fast path for diagonal operators."""
    from .spectral import kpow
    arr = bn_moment_array(phi, psi, N, t, noise)
    return float(np.sum(kpow(arr.shape[-1] // 2, -2.0 * gamma) * arr))


# ---------------------------------------------------------------------------
# time-integrated chaos: zeta and B(zeta, z)
#
# Every second moment below is a double time integral of a sum of terms
# exp(c t + alpha s + beta s' + delta |s - s'|) over [0, t]^2, which is a
# pair of second divided differences of y -> e^{y t}.


def _phi1(h):
    h = np.asarray(h, dtype=float)
    out = np.ones_like(h)
    nz = h != 0
    out[nz] = np.expm1(h[nz]) / h[nz]
    return out


def _phi1_prime(h):
    h = np.asarray(h, dtype=float)
    out = np.empty_like(h)
    small = np.abs(h) < 1e-2
    hs = h[small]
    out[small] = 0.5 + hs / 3.0 + hs ** 2 / 8.0 + hs ** 3 / 30.0 + hs ** 4 / 144.0
    hb = h[~small]
    out[~small] = (np.exp(hb) * (hb - 1.0) + 1.0) / (hb * hb)
    return out


def dd3_exp(y0, y1, y2):
    """Divided difference exp[y0, y1, y2], vectorized, stable for nonpositive arguments."""
    y0, y1, y2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y0, y1, y2)))
    top = np.maximum(np.maximum(y0, y1), y2)
    low = np.minimum(np.minimum(y0, y1), y2)
    mid = y0 + y1 + y2 - top - low
    h1 = mid - top
    h2 = low - top
    d = h1 - h2
    close = d <= 1e-7 * np.maximum(1.0, -h2)
    with np.errstate(invalid="ignore", divide="ignore"):
        e1, e2 = np.expm1(h1), np.expm1(h2)
        p1 = np.where(h1 != 0, e1 / h1, 1.0)
        p2 = np.where(h2 != 0, e2 / h2, 1.0)
        out = np.array((p1 - p2) / d, dtype=float)
    if np.any(close):
        out[close] = _phi1_prime(0.5 * (h1[close] + h2[close]))
    return np.exp(top) * out


def square_exp_integral(alpha, beta, delta, c, t: float):
    """int_0^t int_0^t exp(c t + alpha s + beta s' + delta |s - s'|) ds ds'.

    Splitting at s = s' gives exp-divided differences at the triangle corners,
    so the result is exact up to round-off as long as the integrand is bounded
    by 1 on the square (every corner exponent nonpositive).
    """
    a, b, d, c = (np.asarray(v, dtype=float) for v in (alpha, beta, delta, c))
    return t * t * (dd3_exp(c * t, (c + a + d) * t, (c + a + b) * t)
                    + dd3_exp(c * t, (c + b + d) * t, (c + a + b) * t))


def _direct_time(la, lm, ln, t):
    """int int e^{-la(2t-s-s')} (e^{-lm|s-s'|} - e^{-lm(s+s')}) (e^{-ln|s-s'|} - e^{-ln(s+s')})."""
    c = -2.0 * la
    return (square_exp_integral(la, la, -(lm + ln), c, t)
            - square_exp_integral(la - ln, la - ln, -lm, c, t)
            - square_exp_integral(la - lm, la - lm, -ln, c, t)
            + square_exp_integral(la - lm - ln, la - lm - ln, 0.0, c, t))


def _chain_time(la, lb, lx, ly, lw, t):
    """int int e^{-la(t-s) - lb(t-s')} Cx(s, t) Cy(s', t) Cw(s, s') without the |phi|^2/(2 lam) factors.

    Cx(s, t) = e^{-lx(t-s)} - e^{-lx(t+s)}, likewise Cy in s', and
    Cw(s, s') = e^{-lw|s-s'|} - e^{-lw(s+s')}.
    """
    total = 0.0
    for sx, ax in ((1.0, lx), (-1.0, -lx)):
        for sy, by in ((1.0, ly), (-1.0, -ly)):
            c = -la - lb - lx - ly
            total = total + sx * sy * (
                square_exp_integral(la + ax, lb + by, -lw, c, t)
                - square_exp_integral(la + ax - lw, lb + by - lw, 0.0, c, t))
    return total


def _orbit_weights(modes: np.ndarray) -> np.ndarray:
    """Weights for summing over the ball through lattice-symmetry representatives.

    Rotations by 90 degrees and reflections preserve every summand below, so
    the outer mode sum runs over m1 > 0, 0 <= m2 <= m1 with weight equal to the
    orbit size (4 on the axes and diagonals, 8 elsewhere) and 0 otherwise.
    """
    m1, m2 = modes[:, 0], modes[:, 1]
    rep = (m1 > 0) & (m2 >= 0) & (m2 <= m1)
    return np.where(rep, np.where((m2 == 0) | (m2 == m1), 4.0, 8.0), 0.0)


def _ball_table(N: float, noise: NoiseSpec):
    """Modes of the ball |m| <= N with lam = |m|^4 and |phi|^2/(2 lam), plus an index grid."""
    from .regularization import mode_list
    modes = np.array(mode_list(N), dtype=int)
    lam = (modes[:, 0] ** 2 + modes[:, 1] ** 2).astype(float) ** 2
    Kn = max(box_radius(N), 1)
    phi2 = noise.phi2(Kn)[modes[:, 0] + Kn, modes[:, 1] + Kn]
    pre = phi2 / (2.0 * lam)
    return modes, lam, pre


def zeta_norm_moment(N: float, s: float, t: float, noise: NoiseSpec = WHITE) -> float:
    """Exact E||zeta^N(t)||^2 in H^s.

    zeta^N_k = -|k|^2 int_0^t e^{-|k|^4(t-r)} J^N_k(r) dr, and for k != 0
    E[J_k(r) conj J_k(r')] = 2 sum_{m+n=k} (m.n)^2 C_m(r, r') C_n(r, r').
    """
    modes, lam, pre = _ball_table(N, noise)
    total = 0.0
    for i in range(len(modes)):
        k = modes[i] + modes
        q = (k[:, 0] ** 2 + k[:, 1] ** 2).astype(float)
        ok = q > 0
        dot = (modes[i] @ modes[ok].T).astype(float)
        tm = _direct_time(q[ok] ** 2, lam[i], lam[ok], t)
        total += float(np.sum(2.0 * q[ok] ** (s + 2.0) * dot ** 2 * pre[i] * pre[ok] * tm))
    return total


def bzeta_cauchy_moment(N: float, gamma: float, t: float, noise: NoiseSpec = WHITE) -> float:
    """Exact E||B(zeta^N, z^N) - B(zeta^{2N}, z^{2N})||^2 in H^{-2-gamma} at time t.

    B(zeta^L, z^L)_k = |k|^2 sum over triples (m, n, b) in the ball |.| <= L with
    m + n + b = k of c(m, n, b) int_0^t e^{-|a|^4(t-r)} z_m(r) z_n(r) dr z_b(t),
    a = m + n, c = -(a.b)|a|^2 (m.n).  The difference keeps the triples with
    N < max(|m|, |n|, |b|) <= 2N.  Of the 15 six-factor pairings, the five
    containing an (m, n) self-pair vanish since a = 0 kills c; the remaining
    ten fall into 2 direct, 4 exchanged (b <-> m across the two copies) and
    4 mean pairings (b = -m within a copy).
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    modes, lam, pre = _ball_table(2 * N, noise)
    M = len(modes)
    orbit = _orbit_weights(modes) if noise.multiplier is None else np.ones(M)
    norm = np.sqrt(modes[:, 0] ** 2 + modes[:, 1] ** 2)
    outer = norm > N + 1e-9
    Cbb = pre * (-np.expm1(-2.0 * lam * t))
    total = 0.0

    def lam_of(v):
        return (v[..., 0] ** 2 + v[..., 1] ** 2).astype(float) ** 2

    for i in np.nonzero(orbit)[0]:
        m = modes[i]
        a = m + modes                                  # indexed by n
        qa = (a[:, 0] ** 2 + a[:, 1] ** 2).astype(float)
        mn = (modes @ m).astype(float)
        dt_direct = _direct_time(qa ** 2, lam[i], lam, t)
        # triples (m, n, b): rows n, columns b
        k = a[:, None, :] + modes[None, :, :]
        qk = (k[..., 0] ** 2 + k[..., 1] ** 2).astype(float)
        ab = (a @ modes.T).astype(float)
        cT = -ab * qa[:, None] * mn[:, None]
        inside = outer[i] | outer[:, None] | outer[None, :]
        live = inside & (qk > 0) & (qa[:, None] > 0)
        wk = np.zeros_like(qk)
        wk[live] = qk[live] ** (-gamma)
        total += orbit[i] * 2.0 * float(np.sum(wk * cT ** 2 * Cbb[None, :]
                                    * (pre[i] * pre * dt_direct)[:, None]))
        # exchanged partner (b, n, m): a' = b + n
        a2 = modes[None, :, :] + modes[:, None, :]
        qa2 = (a2[..., 0] ** 2 + a2[..., 1] ** 2).astype(float)
        cT2 = -np.einsum("nbj,j->nb", a2, m).astype(float) * qa2 * (modes[:, None, :] * modes[None, :, :]).sum(-1)
        nz = live & (qa2 > 0)
        if np.any(nz):
            nn, bb = np.nonzero(nz)
            tm = _chain_time(qa[nn] ** 2, qa2[nn, bb] ** 2, lam[i], lam[bb], lam[nn], t)
            total += orbit[i] * 4.0 * float(np.sum(wk[nn, bb] * cT[nn, bb] * cT2[nn, bb]
                                        * pre[i] * pre[bb] * pre[nn] * tm))
    # mean pairings: n = k, b = -m; F_k couples pairs (m, m') through C_k(s, s')
    for j in np.nonzero(orbit)[0]:
        kv = modes[j]
        live = (outer | outer[j])
        a = modes[live] + kv
        qa = (a[:, 0] ** 2 + a[:, 1] ** 2).astype(float)
        mm = modes[live]
        c = -(a * (-mm)).sum(-1).astype(float) * qa * (mm @ kv).astype(float)
        keep = c != 0
        if not np.any(keep):
            continue
        c, qa, lm, pm = c[keep], qa[keep], lam[live][keep], pre[live][keep]
        tm = _chain_time(qa[:, None] ** 2, qa[None, :] ** 2, lm[:, None], lm[None, :], lam[j], t)
        qk = float(kv @ kv)
        total += orbit[j] * 4.0 * qk ** (-gamma) * pre[j] * float(np.sum((c * pm)[:, None] * (c * pm)[None, :] * tm))
    return total
