"""Stochastic convolution z: exact Ornstein-Uhlenbeck transitions per Fourier mode.

Each mode solves dz_k = -|k|^4 z_k dt + phi_k dbeta_k with complex Brownian
motions normalised so that E|beta_k(t)|^2 = t, hence

    E|z_k(t)|^2 = |phi_k|^2 (1 - exp(-2 |k|^4 t)) / (2 |k|^4).

Random streams are Philox generators keyed by (master_seed, replica), so any
replica can be regenerated on its own and replica sets are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralField, ball_mask, box_radius, ksq, reflect, upper_half_mask


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal noise covariance: |phi_k|^2 = c |k|^beta unless a multiplier is given.

    `multiplier` maps (k1, k2) -> phi_k; modes it does not list get phi = 0.
    `N` optionally restricts the noise to the Galerkin ball |k| <= N.
    """

    beta: float = 0.0
    c: float = 1.0
    multiplier: dict | None = None
    N: float | None = None

    def phi2(self, K: int) -> np.ndarray:
        """|phi_k|^2 on the (2K+1)^2 box (zero at k = 0)."""
        q = ksq(K)
        out = np.zeros_like(q)
        nz = q > 0
        if self.multiplier is None:
            out[nz] = self.c * q[nz] ** (0.5 * self.beta)
        else:
            for (a, b), v in self.multiplier.items():
                if max(abs(a), abs(b)) <= K and (a, b) != (0, 0):
                    out[a + K, b + K] = abs(v) ** 2
            if np.any(np.abs(out - reflect(out)) > 1e-12):
                raise ValueError("multiplier must satisfy |phi_-k| = |phi_k|")
        if self.N is not None:
            out = out * ball_mask(K, self.N)
        return out

    def to_dict(self) -> dict:
        d = {"beta": self.beta, "c": self.c, "N": self.N}
        if self.multiplier is not None:
            d["multiplier"] = [[a, b, complex(v).real, complex(v).imag]
                               for (a, b), v in sorted(self.multiplier.items())]
        return d


WHITE = NoiseSpec()


def replica_rng(master_seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one replica (and optional sub-stream)."""
    ss = np.random.SeedSequence([int(master_seed), int(replica), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def hermitian_normal(K: int, rng: np.random.Generator, size=()) -> np.ndarray:
    """Hermitian array of standard complex normals (E|xi_k|^2 = 1), xi_0 = 0.

    Only the Z^2_+ half is drawn; the rest follows by conjugation, so the
    number of draws per call is fixed by K.
    """
    up = upper_half_mask(K)
    n = int(up.sum())
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    g = rng.standard_normal(shape + (n, 2))
    out = np.zeros(shape + (2 * K + 1, 2 * K + 1), dtype=complex)
    out[..., up] = (g[..., 0] + 1j * g[..., 1]) / math.sqrt(2.0)
    out = out + np.conj(reflect(out))
    return out


@dataclass
class OUEnsembleState:
    """Per-replica OU modes z and, optionally, the integrals calJ used for zeta."""

    K: int
    time: float = 0.0
    z: np.ndarray | None = None
    J: np.ndarray | None = None
    rng: np.random.Generator = field(default_factory=lambda: replica_rng(0, 0))

    def __post_init__(self):
        shape = (2 * self.K + 1, 2 * self.K + 1)
        if self.z is None:
            self.z = np.zeros(shape, dtype=complex)

    def field(self) -> SpectralField:
        return SpectralField(self.z, check=False)


def ou_transition(K: int, dt: float, spec: NoiseSpec):
    """Decay factor and per-mode increment variance E|xi_k|^2 for one exact step."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    lam = ksq(K) ** 2
    decay = np.exp(-lam * dt)
    var = np.zeros_like(lam)
    nz = lam > 0
    var[nz] = spec.phi2(K)[nz] * (-np.expm1(-2.0 * lam[nz] * dt)) / (2.0 * lam[nz])
    return decay, var


def ou_step(state: OUEnsembleState, dt: float, spec: NoiseSpec) -> OUEnsembleState:
    """Advance z by dt with the exact OU transition (no discretisation error in law).

    Real and imaginary parts of the innovation each have variance
    |phi_k|^2 (1 - exp(-2|k|^4 dt)) / (4|k|^4).
    """
    decay, var = ou_transition(state.K, dt, spec)
    xi = hermitian_normal(state.K, state.rng, size=state.z.shape[:-2])
    z = decay * state.z + np.sqrt(var) * xi
    return OUEnsembleState(K=state.K, time=state.time + dt, z=z,
                           J=None if state.J is None else state.J.copy(), rng=state.rng)


def ou_cov(m, t: float, s: float, spec: NoiseSpec = WHITE) -> float:
    """E[z_m(t) conj z_m(s)] = |phi_m|^2 (e^{-|m|^4|t-s|} - e^{-|m|^4(t+s)}) / (2|m|^4)."""
    if t < 0 or s < 0:
        raise ValueError("times must be nonnegative")
    m1, m2 = int(m[0]), int(m[1])
    q = m1 * m1 + m2 * m2
    if q == 0:
        return 0.0
    K = max(abs(m1), abs(m2))
    phi2 = spec.phi2(K)[m1 + K, m2 + K]
    lam = float(q * q)
    lo, hi = min(t, s), max(t, s)
    # e^{-lam(hi-lo)} - e^{-lam(hi+lo)} = e^{-lam(hi-lo)} (1 - e^{-2 lam lo})
    return float(phi2 * math.exp(-lam * (hi - lo)) * (-math.expm1(-2.0 * lam * lo)) / (2.0 * lam))


def ou_cov_array(K: int, t: float, s: float, spec: NoiseSpec = WHITE) -> np.ndarray:
    """ou_cov for every mode of the box at once."""
    if t < 0 or s < 0:
        raise ValueError("times must be nonnegative")
    lam = ksq(K) ** 2
    out = np.zeros_like(lam)
    nz = lam > 0
    lo, hi = min(t, s), max(t, s)
    out[nz] = (spec.phi2(K)[nz] * np.exp(-lam[nz] * (hi - lo))
               * (-np.expm1(-2.0 * lam[nz] * lo)) / (2.0 * lam[nz]))
    return out


def h1_partial_sum(K: float, t: float, spec: NoiseSpec = WHITE) -> float:
    """sum_{0<|k|<=K} |k|^2 E|z_k(t)|^2, the H^1 moment of z(t) restricted to the ball."""
    Kb = max(box_radius(K), 1)
    w = ksq(Kb) * ball_mask(Kb, K)
    return float(np.sum(w * ou_cov_array(Kb, t, t, spec)))


def sample_z_replica(spec: NoiseSpec, times, K: int, master_seed: int,
                     replica: int) -> np.ndarray:
    """One replica's path at the given times; array of shape (len(times), 2K+1, 2K+1)."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] <= 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing and start after 0")
    state = OUEnsembleState(K=K, rng=replica_rng(master_seed, replica))
    out = np.empty((times.size, 2 * K + 1, 2 * K + 1), dtype=complex)
    prev = 0.0
    for j, t in enumerate(times):
        state = ou_step(state, t - prev, spec)
        prev = t
        out[j] = state.z
    return out


def sample_z_path(spec: NoiseSpec, times, replicas: int, master_seed: int,
                  K: int = 8) -> list:
    """Per-replica lists of SpectralFields at the requested times."""
    if replicas < 1:
        raise ValueError("need at least one replica")
    out = []
    for r in range(replicas):
        path = sample_z_replica(spec, times, K, master_seed, r)
        out.append([SpectralField(p, check=False) for p in path])
    return out


def sample_z_batch(spec: NoiseSpec, t: float, K: int, replicas: int,
                   master_seed: int, start: int = 0) -> np.ndarray:
    """z(t) for replicas start..start+replicas-1, one exact step from z(0) = 0."""
    out = np.empty((replicas, 2 * K + 1, 2 * K + 1), dtype=complex)
    for j in range(replicas):
        out[j] = sample_z_replica(spec, [t], K, master_seed, start + j)[0]
    return out


class GramFactor:
    """Hermitian square root of a PSD matrix on a symmetric mode list.

    The principal square root commutes with the reflection-conjugation
    symmetry of real operators, so it maps Hermitian white noise to Hermitian
    correlated noise.
    """

    def __init__(self, matrix: np.ndarray, modes, tol: float = 1e-9):
        M = np.asarray(matrix, dtype=complex)
        if M.shape != (len(modes), len(modes)):
            raise ValueError("matrix and mode list do not match")
        if np.max(np.abs(M - M.conj().T)) > tol * max(1.0, np.max(np.abs(M))):
            raise ValueError("matrix is not Hermitian")
        w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
        if w.min() < -tol:
            raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
        self.modes = [tuple(int(x) for x in m) for m in modes]
        self.index = {m: i for i, m in enumerate(self.modes)}
        self.neg = np.array([self.index[(-a, -b)] for a, b in self.modes])
        self.root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T

    def white(self, rng: np.random.Generator, size=()) -> np.ndarray:
        """Hermitian white vector on the mode list: xi_{-m} = conj xi_m, E|xi_m|^2 = 1."""
        plus = [i for i, (a, b) in enumerate(self.modes) if a > 0 or (a == 0 and b > 0)]
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        g = rng.standard_normal(shape + (len(plus), 2))
        xi = np.zeros(shape + (len(self.modes),), dtype=complex)
        vals = (g[..., 0] + 1j * g[..., 1]) / math.sqrt(2.0)
        xi[..., plus] = vals
        xi[..., self.neg[plus]] = np.conj(vals)
        return xi

    def sample(self, rng: np.random.Generator, scale: float = 1.0, size=()) -> np.ndarray:
        xi = self.white(rng, size)
        out = math.sqrt(scale) * xi @ self.root.T
        # remove rounding asymmetry between m and -m
        return 0.5 * (out + np.conj(out[..., self.neg]))


def correlated_increment(gram, dt: float, rng: np.random.Generator, size=()) -> dict:
    """Gaussian increments with E[dB_m conj dB_n] = dt <Phi e_n, Phi e_m>.

    `gram` is a GramTable (self case) or a (matrix, modes) pair whose
    entry [i, j] is <Phi e_{m_i}, Phi e_{m_j}>.  The factorisation is
    computed once and cached on the GramTable.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    if hasattr(gram, "factor"):
        fac = gram.factor()
        modes = gram.modes
    else:
        matrix, modes = gram
        fac = GramFactor(np.conj(matrix), modes)
    vec = fac.sample(rng, dt, size)
    return {tuple(m): vec[..., i] for i, m in enumerate(modes)}
