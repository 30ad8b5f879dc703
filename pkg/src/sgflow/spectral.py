"""Fourier representation of mean-zero real fields on the torus [-pi, pi]^2.

A field u = sum_k u_k e_k with e_k(x) = exp(i k.x) / (2 pi) is stored as a
dense complex array of shape (2K+1, 2K+1); entry [k1+K, k2+K] holds u_k.
Stored fields are Hermitian (u_{-k} = conj u_k) and have no k = 0 mode.

Most helpers accept raw coefficient arrays with arbitrary leading batch
dimensions, which is what the Monte-Carlo drivers use.  The public
operations take and return SpectralField objects.
"""
from __future__ import annotations

import csv
import math
from functools import lru_cache

import numpy as np
from scipy import fft as sfft


def wavenumbers(K: int):
    """Integer wavenumber grids (k1, k2) of shape (2K+1, 2K+1)."""
    k = np.arange(-K, K + 1)
    return np.meshgrid(k, k, indexing="ij")


@lru_cache(maxsize=64)
def _ksq_cached(K):
    k1, k2 = wavenumbers(K)
    out = (k1 * k1 + k2 * k2).astype(float)
    out.setflags(write=False)
    return out


def ksq(K: int) -> np.ndarray:
    """|k|^2 on the (2K+1)^2 box."""
    return _ksq_cached(K)


def kpow(K: int, power: float) -> np.ndarray:
    """|k|^power on the box, with the k = 0 entry set to 0."""
    q = ksq(K)
    out = np.zeros_like(q)
    nz = q > 0
    out[nz] = q[nz] ** (0.5 * power)
    return out


def upper_half_mask(K: int) -> np.ndarray:
    """Indicator of Z^2_+ = {k1 > 0} u {k1 = 0, k2 > 0}."""
    k1, k2 = wavenumbers(K)
    return (k1 > 0) | ((k1 == 0) & (k2 > 0))


BALL_TOL = 1e-9


def ball_mask(K: int, N: float) -> np.ndarray:
    """Indicator of 0 < |k| <= N on the box of half-width K."""
    q = ksq(K)
    return (q > 0) & (q <= N * N + BALL_TOL)


def box_radius(N: float) -> int:
    """Largest integer r with r <= N, with the same rounding slack as ball_mask."""
    return int(math.floor(N + BALL_TOL))


def reflect(c: np.ndarray) -> np.ndarray:
    """Array whose k entry is the -k entry of c (last two axes)."""
    return c[..., ::-1, ::-1]


def hermitize(c: np.ndarray) -> np.ndarray:
    """Project onto Hermitian, mean-zero arrays."""
    out = 0.5 * (c + np.conj(reflect(c)))
    K = c.shape[-1] // 2
    out[..., K, K] = 0.0
    return out


def resize(c: np.ndarray, K: int) -> np.ndarray:
    """Pad with zeros or truncate the box to half-width K."""
    K0 = c.shape[-1] // 2
    if K == K0:
        return c
    if K < K0:
        d = K0 - K
        return c[..., d:d + 2 * K + 1, d:d + 2 * K + 1]
    d = K - K0
    out = np.zeros(c.shape[:-2] + (2 * K + 1, 2 * K + 1), dtype=c.dtype)
    out[..., d:d + 2 * K0 + 1, d:d + 2 * K0 + 1] = c
    return out


class SpectralField:
    """Hermitian, mean-zero Fourier coefficients with box cutoff K."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs, check: bool = True, tol: float = 1e-9):
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] % 2 == 0:
            raise ValueError("coefficients must be a (2K+1, 2K+1) array")
        if check:
            K = c.shape[0] // 2
            scale = max(1.0, float(np.max(np.abs(c))) if c.size else 1.0)
            if abs(c[K, K]) > tol * scale:
                raise ValueError("field has a nonzero k = 0 mode")
            if np.max(np.abs(c - np.conj(reflect(c)))) > tol * scale:
                raise ValueError("field is not Hermitian symmetric")
        c.setflags(write=False)
        self.coeffs = c

    @property
    def K(self) -> int:
        return self.coeffs.shape[0] // 2

    @classmethod
    def zeros(cls, K: int) -> "SpectralField":
        return cls(np.zeros((2 * K + 1, 2 * K + 1), dtype=complex), check=False)

    @classmethod
    def from_modes(cls, modes: dict, K: int | None = None) -> "SpectralField":
        """Build from {(k1, k2): value}; missing conjugate partners are filled."""
        if K is None:
            K = max(max(abs(a), abs(b)) for a, b in modes) if modes else 1
        c = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
        for (a, b), val in modes.items():
            if (a, b) == (0, 0):
                raise ValueError("the k = 0 mode is not part of the field")
            c[a + K, b + K] = val
            if (-a, -b) not in modes:
                c[-a + K, -b + K] = np.conj(val)
        return cls(c)

    @classmethod
    def from_array(cls, c) -> "SpectralField":
        """Wrap an array after projecting it onto Hermitian mean-zero form."""
        return cls(hermitize(np.asarray(c, dtype=complex)), check=False)

    def coeff(self, k1: int, k2: int) -> complex:
        K = self.K
        if max(abs(k1), abs(k2)) > K:
            return 0j
        return complex(self.coeffs[k1 + K, k2 + K])

    def resized(self, K: int) -> "SpectralField":
        return SpectralField(resize(self.coeffs, K), check=False)

    def _aligned(self, other):
        K = max(self.K, other.K)
        return resize(self.coeffs, K), resize(other.coeffs, K)

    def __add__(self, other):
        a, b = self._aligned(other)
        return SpectralField(a + b, check=False)

    def __sub__(self, other):
        a, b = self._aligned(other)
        return SpectralField(a - b, check=False)

    def __neg__(self):
        return SpectralField(-self.coeffs, check=False)

    def __mul__(self, scalar):
        return SpectralField(self.coeffs * scalar, check=False)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralField(K={self.K}, nnz={int(np.count_nonzero(self.coeffs))})"

    def to_csv(self, path) -> None:
        """Write the Z^2_+ half as columns k1,k2,re,im."""
        K = self.K
        k1, k2 = wavenumbers(K)
        mask = upper_half_mask(K)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k1", "k2", "re", "im"])
            for a, b, v in zip(k1[mask], k2[mask], self.coeffs[mask]):
                w.writerow([int(a), int(b), f"{v.real:.17g}", f"{v.imag:.17g}"])

    @classmethod
    def from_csv(cls, path, K: int | None = None) -> "SpectralField":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["k1"]), int(row["k2"]),
                             complex(float(row["re"]), float(row["im"]))))
        if K is None:
            K = max([max(abs(a), abs(b)) for a, b, _ in rows] + [1])
        c = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
        for a, b, v in rows:
            if not (a > 0 or (a == 0 and b > 0)):
                raise ValueError(f"mode ({a},{b}) is not in the upper half plane")
            c[a + K, b + K] = v
            c[-a + K, -b + K] = np.conj(v)
        return cls(c)


def random_field(K: int, rng: np.random.Generator, decay: float = 0.0,
                 N: float | None = None, size=None) -> np.ndarray:
    """Hermitian complex Gaussian coefficients with E|u_k|^2 = |k|^(-decay).

    Returns a raw array (with leading shape `size` if given).  Modes outside
    the Euclidean ball |k| <= N are zero when N is given.
    """
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (2 * K + 1, 2 * K + 1)
    xi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    up = upper_half_mask(K)
    xi = np.where(up, xi, np.conj(reflect(xi)))
    amp = kpow(K, -0.5 * decay)
    if N is not None:
        amp = amp * ball_mask(K, N)
    out = xi * amp
    out[..., K, K] = 0.0
    return out


def hs_norm_sq_array(c: np.ndarray, s: float) -> np.ndarray:
    """sum_k |k|^(2s) |c_k|^2 over the last two axes."""
    K = c.shape[-1] // 2
    w = kpow(K, 2.0 * s)
    return np.sum(w * (c.real ** 2 + c.imag ** 2), axis=(-2, -1))


def hs_norm(u: SpectralField, s: float) -> float:
    """Homogeneous Sobolev norm (sum_k |k|^(2s) |u_k|^2)^(1/2)."""
    return float(math.sqrt(hs_norm_sq_array(u.coeffs, s)))


def semigroup_factor(K: int, t: float) -> np.ndarray:
    """Multiplier exp(-t |k|^4) of S(t) = exp(-t Delta^2)."""
    q = ksq(K)
    return np.exp(-t * q * q)


def semigroup_apply(u: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    return SpectralField(u.coeffs * semigroup_factor(u.K, t), check=False)


def frac_power_apply(u: SpectralField, a: float) -> SpectralField:
    """Apply A^a with A = Delta^2, i.e. multiply mode k by |k|^(4a)."""
    return SpectralField(u.coeffs * kpow(u.K, 4.0 * a), check=False)


def project_galerkin(u: SpectralField, N: float) -> SpectralField:
    """Keep the modes with 0 < |k| <= N (Euclidean)."""
    if N < 1:
        raise ValueError("Galerkin cutoff must be at least 1")
    return SpectralField(u.coeffs * ball_mask(u.K, N), check=False)


def grid_points(G: int) -> np.ndarray:
    """Uniform nodes -pi + 2 pi j / G, j = 0..G-1."""
    return -math.pi + 2.0 * math.pi * np.arange(G) / G


def to_grid_array(c: np.ndarray, G: int) -> np.ndarray:
    """Evaluate sum_k c_k e_k on the G x G grid (batched over leading axes).

    Modes are folded onto FFT bins, so point values are exact whenever
    G >= 2K; with G = 2K the +-K modes share the Nyquist bin, which is
    still exact for Hermitian data.
    """
    K = c.shape[-1] // 2
    if G < 2 * K:
        raise ValueError(f"grid G={G} too small for cutoff K={K} (need G >= 2K)")
    k = np.arange(-K, K + 1)
    sign = np.where((k[:, None] + k[None, :]) % 2 == 0, 1.0, -1.0)
    fold = np.zeros((G, 2 * K + 1))
    fold[k % G, np.arange(2 * K + 1)] = 1.0
    buf = fold @ (c * sign) @ fold.T
    vals = sfft.ifft2(buf, axes=(-2, -1)) * (G * G / (2.0 * math.pi))
    return vals.real


def to_grid(u: SpectralField, G: int) -> np.ndarray:
    """Real G x G array of point values; see to_grid_array for the layout."""
    vals = to_grid_array(u.coeffs, G)
    return vals


@lru_cache(maxsize=32)
def _gagliardo_weights(G: int, exponent: float) -> np.ndarray:
    h = 2.0 * math.pi / G
    j = np.arange(G)
    d1 = h * np.minimum(j, G - j)
    dist = np.sqrt(d1[:, None] ** 2 + d1[None, :] ** 2)
    w = np.zeros((G, G))
    nz = dist > 0
    w[nz] = dist[nz] ** (-exponent)
    w.setflags(write=False)
    return w


def _increment_sums(U: np.ndarray, p: float) -> np.ndarray:
    """S(h) = sum_x |U(x+h) - U(x)|^p for every grid offset h (batched)."""
    G = U.shape[-1]
    if p == 2:
        F = sfft.fft2(U, axes=(-2, -1))
        corr = sfft.ifft2(F * np.conj(F), axes=(-2, -1)).real
        tot = np.sum(U * U, axis=(-2, -1))[..., None, None]
        return np.maximum(2.0 * tot - 2.0 * corr, 0.0)
    if p == 4:
        pows = [U ** j for j in range(5)]
        Fs = [sfft.fft2(P, axes=(-2, -1)) for P in pows]
        out = np.zeros(U.shape)
        for j, coef in enumerate((1, -4, 6, -4, 1)):
            out += coef * sfft.ifft2(Fs[4 - j] * np.conj(Fs[j]), axes=(-2, -1)).real
        return np.maximum(out, 0.0)
    out = np.zeros(U.shape)
    for a in range(G):
        for b in range(G):
            if (a, b) == (0, 0):
                continue
            # S(h) = S(-h): reuse the mirrored offset when already computed
            ma, mb = (-a) % G, (-b) % G
            if (ma, mb) < (a, b):
                out[..., a, b] = out[..., ma, mb]
                continue
            D = np.roll(U, shift=(-a, -b), axis=(-2, -1)) - U
            out[..., a, b] = np.sum(np.abs(D) ** p, axis=(-2, -1))
    return out


def wsp_grid_estimate(U: np.ndarray, s: float, p: float) -> np.ndarray:
    """W^{s,p} estimate from grid values U (batched over leading axes)."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be at least 1")
    G = U.shape[-1]
    cell = (2.0 * math.pi / G) ** 2
    lp = cell * np.sum(np.abs(U) ** p, axis=(-2, -1))
    w = _gagliardo_weights(G, 2.0 + s * p)
    semi = cell * cell * np.sum(w * _increment_sums(U, p), axis=(-2, -1))
    return (lp + semi) ** (1.0 / p)


def wsp_norm_estimate(u: SpectralField, s: float, p: float, G: int) -> float:
    """Grid estimate of the W^{s,p} norm: (L^p norm^p + Gagliardo^p)^(1/p).

    The Gagliardo double integral is a midpoint sum over all pairs of grid
    points with the periodic distance, coincident pairs skipped.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if G < 8:
        raise ValueError("grid must have G >= 8")
    U = to_grid(u, G)
    return float(wsp_grid_estimate(U, s, p))
