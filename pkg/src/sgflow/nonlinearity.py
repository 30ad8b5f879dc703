"""The bilinear map B(u, v)_k = |k|^2 sum_{m+n=k} (m.n) u_m v_n and its Galerkin pieces.

Convolutions over mode pairs are evaluated either directly (scipy's direct
method, exact summation order independent of magnitudes) or through a
zero-padded FFT for batched Monte-Carlo work.  Both give the same numbers to
round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .ou import NoiseSpec, WHITE, ou_cov_array
from .spectral import SpectralField, ball_mask, box_radius, kpow, ksq, resize, wavenumbers


def convolve_modes(a: np.ndarray, b: np.ndarray, method: str = "direct") -> np.ndarray:
    """Full 2D convolution c_k = sum_{m+n=k} a_m b_n on mode boxes.

    Inputs of half-widths Ka, Kb give an output of half-width Ka + Kb.
    The FFT path accepts leading batch axes.
    """
    if method == "direct":
        if a.ndim != 2 or b.ndim != 2:
            return _broadcast_direct(a, b)
        return signal.convolve(a, b, mode="full", method="direct")
    if method == "fft":
        na, nb = a.shape[-1], b.shape[-1]
        n = na + nb - 1
        L = sfft.next_fast_len(n)
        A = sfft.fft2(a, s=(L, L), axes=(-2, -1))
        B = sfft.fft2(b, s=(L, L), axes=(-2, -1))
        out = sfft.ifft2(A * B, axes=(-2, -1))[..., :n, :n]
        if np.isrealobj(a) and np.isrealobj(b):
            out = out.real
        return out
    raise ValueError(f"unknown convolution method {method!r}")


def _broadcast_direct(a, b):
    a, b = np.broadcast_arrays(a, b)
    lead = a.shape[:-2]
    flat = [convolve_modes(x, y, "direct")
            for x, y in zip(a.reshape((-1,) + a.shape[-2:]), b.reshape((-1,) + b.shape[-2:]))]
    return np.stack(flat).reshape(lead + flat[0].shape)


def dot_convolution(u: np.ndarray, v: np.ndarray, method: str = "direct") -> np.ndarray:
    """sum_{m+n=k} (m.n) u_m v_n for every k (no |k|^2 factor)."""
    Ku, Kv = u.shape[-1] // 2, v.shape[-1] // 2
    m1, m2 = wavenumbers(Ku)
    n1, n2 = wavenumbers(Kv)
    return (convolve_modes(m1 * u, n1 * v, method)
            + convolve_modes(m2 * u, n2 * v, method))


def bilinear_array(u: np.ndarray, v: np.ndarray, method: str = "direct") -> np.ndarray:
    """B(u, v) on raw coefficient arrays; output half-width Ku + Kv."""
    out = dot_convolution(u, v, method)
    return out * ksq(out.shape[-1] // 2)


def bilinear_B(u: SpectralField, v: SpectralField, method: str = "direct") -> SpectralField:
    """B(u, v) with cutoff Ku + Kv; the k = 0 coefficient vanishes through |k|^2."""
    return SpectralField(bilinear_array(u.coeffs, v.coeffs, method), check=False)


def bilinear_B_truncated(u: SpectralField, v: SpectralField, N: float,
                         method: str = "direct") -> SpectralField:
    """B_N(u, v) = B(pi_N u, pi_N v); support inside |k| <= 2N."""
    if N < 1:
        raise ValueError("Galerkin cutoff must be at least 1")
    a = galerkin_restrict(u.coeffs, N)
    b = galerkin_restrict(v.coeffs, N)
    return SpectralField(bilinear_array(a, b, method), check=False)


@dataclass(frozen=True)
class JCoefficients:
    """J_k^N = sum_{m+n=k, |m|,|n| <= N} (m.n) z_m z_n on the box of half-width 2N."""

    N: float
    values: np.ndarray

    @property
    def K(self) -> int:
        return self.values.shape[-1] // 2

    def __getitem__(self, k) -> complex:
        K = self.K
        a, b = int(k[0]), int(k[1])
        if max(abs(a), abs(b)) > K:
            return 0j
        return complex(self.values[a + K, b + K])


def galerkin_restrict(c: np.ndarray, N: float) -> np.ndarray:
    """Restrict a coefficient array to the ball |k| <= N, stored on the box of half-width floor(N)."""
    Kn = max(box_radius(N), 1)
    return resize(c, Kn) * ball_mask(Kn, N)


def j_array(z: np.ndarray, N: float, method: str = "direct") -> np.ndarray:
    """J^N_k for raw (possibly batched) arrays, including k = 0."""
    zn = galerkin_restrict(z, N)
    return dot_convolution(zn, zn, method)


def j_coefficients(z: SpectralField, N: float, method: str = "direct") -> JCoefficients:
    if N < 1:
        raise ValueError("Galerkin cutoff must be at least 1")
    return JCoefficients(N=N, values=j_array(z.coeffs, N, method))


def _weights_for_norm(K: int, gamma: float) -> np.ndarray:
    """|k|^{-2 gamma} on the box, zero at k = 0."""
    return kpow(K, -2.0 * gamma)


def pair_moment_sum(cov: np.ndarray, N: float, method: str = "direct") -> np.ndarray:
    """S_N(k) = sum_{m+n=k, |m|,|n| <= N} (m.n)^2 C_m C_n for a per-mode variance array C.

    Uses (m.n)^2 = m1^2 n1^2 + 2 m1 m2 n1 n2 + m2^2 n2^2, i.e. three
    convolutions.  Output lives on the box of half-width 2 floor(N).
    """
    c = galerkin_restrict(cov.astype(float), N)
    K = c.shape[-1] // 2
    m1, m2 = wavenumbers(K)
    a11 = m1 * m1 * c
    a12 = m1 * m2 * c
    a22 = m2 * m2 * c
    return (convolve_modes(a11, a11, method) + 2.0 * convolve_modes(a12, a12, method)
            + convolve_modes(a22, a22, method))


def jk_second_moments(N: float, t: float, spec: NoiseSpec = WHITE,
                      method: str = "direct") -> np.ndarray:
    """E|J_k^N(t)|^2 for every k on the box of half-width 2 floor(N).

    For k != 0 only the two cross pairings survive, giving 2 S_N(k); at k = 0
    the self-paired term (E J_0)^2 is added.
    """
    Kn = max(box_radius(N), 1)
    cov = ou_cov_array(Kn, t, t, spec)
    out = 2.0 * pair_moment_sum(cov, N, method)
    K = out.shape[-1] // 2
    mean0 = -np.sum(ksq(Kn) * cov * ball_mask(Kn, N))
    out[K, K] += mean0 * mean0
    return out


def renorm_cauchy_diag(N: float, Nprime: float, gamma: float, t: float,
                       spec: NoiseSpec = WHITE) -> float:
    """Exact E||B_N(z,z) - B_N'(z,z)||^2 in H^{-2-gamma} at time t.

    Equals sum_{k != 0} |k|^{-2 gamma} 2 sum (m.n)^2 E|z_m|^2 E|z_n|^2 over
    the pairs with N < max(|m|, |n|) <= N'.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if Nprime < N:
        raise ValueError("need N <= N'")
    if Nprime == N:
        return 0.0
    Kp = max(box_radius(Nprime), 1)
    cov = ou_cov_array(Kp, t, t, spec)
    big = pair_moment_sum(cov, Nprime)
    small = resize(pair_moment_sum(cov, N), big.shape[-1] // 2)
    ring = big - small
    w = _weights_for_norm(big.shape[-1] // 2, gamma)
    return float(2.0 * np.sum(w * ring))


def renorm_moment(N: float, gamma: float, t: float, spec: NoiseSpec = WHITE,
                  p: int = 2):
    """Moment E||B_N(z(t), z(t))||^p in H^{-2-gamma}.

    Returns (value, kind): kind is "exact" for p = 2, and "bound" for larger
    even p, where the hypercontractive estimate
    E|J_k|^p <= (p-1)^p (E|J_k|^2)^{p/2} is combined with Minkowski's
    inequality in L^{p/2}.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    m2 = jk_second_moments(N, t, spec)
    w = _weights_for_norm(m2.shape[-1] // 2, gamma)
    second = float(np.sum(w * m2))
    if p == 2:
        return second, "exact"
    return float((p - 1) ** p * second ** (p / 2)), "bound"


def hnorm_sq_of_bilinear_from_j(J: np.ndarray, gamma: float) -> np.ndarray:
    """||sum_k |k|^2 J_k e_k||^2 in H^{-2-gamma} = sum_{k != 0} |k|^{-2 gamma} |J_k|^2."""
    w = _weights_for_norm(J.shape[-1] // 2, gamma)
    return np.sum(w * (J.real ** 2 + J.imag ** 2), axis=(-2, -1))


def _to_fft_layout(c: np.ndarray, L: int) -> np.ndarray:
    """Place box coefficients (half-width K) at FFT indices k mod L."""
    K = c.shape[-1] // 2
    out = np.zeros(c.shape[:-2] + (L, L), dtype=complex)
    idx = np.arange(-K, K + 1) % L
    out[..., idx[:, None], idx[None, :]] = c
    return out


def square_projected(w: np.ndarray, K: int | None = None) -> np.ndarray:
    """B(w, w) restricted to the box of half-width K (default: the box of w).

    Pseudo-spectral evaluation: sum_{m+n=k} (m.n) w_m w_n is minus the
    Fourier coefficient of |grad w|^2, computed on a real grid of L >= 2 K_w + K + 1
    points per axis so that no aliased product mode reaches the kept box.
    Agrees with bilinear_array followed by truncation to round-off.
    """
    Kw = w.shape[-1] // 2
    K = Kw if K is None else K
    L = sfft.next_fast_len(2 * Kw + K + 1, real=True)
    m1, m2 = wavenumbers(Kw)
    half = L // 2 + 1
    g1 = sfft.irfft2(_to_fft_layout(1j * m1 * w, L)[..., :half], s=(L, L), axes=(-2, -1))
    g2 = sfft.irfft2(_to_fft_layout(1j * m2 * w, L)[..., :half], s=(L, L), axes=(-2, -1))
    # irfft2 carries 1/L^2, so the product spectrum is the convolution over L^2
    spec = sfft.rfft2(g1 * g1 + g2 * g2, axes=(-2, -1)) * (-float(L * L))
    idx = np.arange(-K, K + 1)
    cols = np.abs(idx)
    out = spec[..., (idx % L)[:, None], cols[None, :]]
    # columns with k2 < 0 come from conjugate symmetry
    neg = idx < 0
    out[..., :, neg] = np.conj(spec[..., ((-idx) % L)[:, None], cols[None, neg]])
    return out * ksq(K)
