"""Picard iteration for the remainder v = h - z and the second-order expansion h = u + zeta + z.

The fixed-point map acts on whole trajectories over a fixed grid t_n = n dt:

    (T v)_{n+1} = S(dt) (T v)_n - Q(dt) F(v_n, z_n),   (T v)_0 = h0,

with S(dt) = e^{-dt |k|^4}, Q(dt) = (1 - e^{-dt |k|^4}) / |k|^4 and
F(v, z) = B(v + z, v + z) projected onto the storage box of half-width K.
All B evaluations of one sweep are batched over time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nonlinearity import bilinear_array, galerkin_restrict, j_array, square_projected
from .ou import NoiseSpec, OUEnsembleState, ou_step
from .spectral import (SpectralField, box_radius, hs_norm_sq_array, ksq, resize, semigroup_factor,
                       upper_half_mask, wavenumbers, wsp_norm_estimate)


@dataclass
class SolverConfig:
    epsilon: float = 0.25
    rho: float = 1.0
    T: float = 0.1
    dt: float = 1e-3
    K: int = 16
    R: float = 0.5
    picard_tol: float = 1e-8
    picard_max: int = 60
    beta: float = 0.0
    gamma: float = 0.5
    alpha: float | None = None
    q: float = 32.0
    gamma_prime: float = 2.25
    q_prime: float = 11.0

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 1.0 - min(self.epsilon, self.gamma) / 2.0

    @property
    def p_prime(self) -> float:
        return self.q_prime / (self.q_prime - 1.0)

    @property
    def e1(self) -> float:
        return 0.25 * (1.0 - self.epsilon - self.gamma) - 1.0 / self.q

    @property
    def e2(self) -> float:
        return 1.0 / self.p_prime - 0.25 * (self.gamma_prime + 1.0)

    @property
    def steps(self) -> int:
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("T must be a positive integer multiple of dt")
        return n

    def validate(self, second_order: bool = False) -> "SolverConfig":
        """Check the parameter constraints of the existence argument."""
        eps, beta = self.epsilon, self.beta
        for name in ("rho", "T", "dt", "picard_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.K < 1 or self.picard_max < 1:
            raise ValueError("K and picard_max must be at least 1")
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        if second_order:
            if not (0 < beta < 1 and beta / 2 < eps < 0.5):
                raise ValueError("second-order expansion needs beta in (0,1) and epsilon in (beta/2, 1/2)")
        elif beta == 0:
            if not 0 < eps < 0.5:
                raise ValueError("epsilon must lie in (0, 1/2)")
        else:
            if not (beta < 2.0 / 3.0 and beta / 2 < eps < min(1.0 - beta, 0.5)):
                raise ValueError("rough noise needs beta < 2/3 and epsilon in (beta/2, (1-beta) ^ 1/2)")
        if self.e1 <= 0 or self.e2 <= 0:
            raise ValueError(f"derived exponents must be positive (e1={self.e1:.4g}, e2={self.e2:.4g})")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(e1=self.e1, e2=self.e2, p_prime=self.p_prime)
        return d


@dataclass
class Trajectory:
    """Coefficient arrays on a time grid plus weighted-norm and exit-time metadata."""

    times: np.ndarray
    fields: np.ndarray
    epsilon: float | None = None
    eps_norm_cache: float | None = None
    tau_R: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.fields.shape[0] != self.times.size:
            raise ValueError("one field per time required")
        if self.epsilon is not None and self.eps_norm_cache is None:
            self.eps_norm_cache = eps_norm(self, self.epsilon)

    @property
    def K(self) -> int:
        return self.fields.shape[-1] // 2

    def field_at(self, j: int) -> SpectralField:
        return SpectralField(self.fields[j], check=False)

    def to_csv(self, path, every: int = 1) -> None:
        """Rows t, k1, k2, re, im over the half-plane modes, every `every`-th time."""
        K = self.K
        up = upper_half_mask(K)
        k1, k2 = wavenumbers(K)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "k1", "k2", "re", "im"])
            for j in range(0, self.times.size, every):
                c = self.fields[j]
                for a, b, v in zip(k1[up], k2[up], c[up]):
                    w.writerow([f"{self.times[j]:.17g}", int(a), int(b), f"{v.real:.17g}", f"{v.imag:.17g}"])


def _weighted_norms(times, fields, epsilon):
    return times ** (epsilon / 4.0) * np.sqrt(hs_norm_sq_array(fields, 1.0 + epsilon))


def eps_norm(traj: Trajectory, epsilon: float, T: float | None = None) -> float:
    """sup over stored t <= T of t^{eps/4} ||v(t)||_{H^{1+eps}} (t = 0 carries weight 0)."""
    sel = traj.times <= (np.inf if T is None else T + 1e-12)
    if not np.any(sel):
        return 0.0
    return float(np.max(_weighted_norms(traj.times[sel], traj.fields[sel], epsilon)))


def _array_eps_norm(times, fields, epsilon) -> float:
    return float(np.max(_weighted_norms(times, fields, epsilon)))


def exp_factors(K: int, dt: float):
    """S(dt) and Q(dt) = (1 - e^{-dt |k|^4}) / |k|^4 (Q = dt at k = 0, never used)."""
    lam = ksq(K) ** 2
    S = semigroup_factor(K, dt)
    Q = np.where(lam > 0, -np.expm1(-dt * lam) / np.where(lam > 0, lam, 1.0), dt)
    return S, Q


def mild_step(v: SpectralField, forcing, dt: float, z: SpectralField | None = None) -> SpectralField:
    """One exponential-Euler step of the Duhamel formula.

    `forcing` is either a SpectralField F (used as is) or None, in which case
    F = B_K(v + z, v + z) is formed from the left endpoint.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    K = v.K
    S, Q = exp_factors(K, dt)
    if forcing is None:
        w = v.coeffs if z is None else v.coeffs + resize(z.coeffs, K)
        F = square_projected(w, K)
    else:
        F = resize(forcing.coeffs, K)
    return SpectralField(S * v.coeffs - Q * F, check=False)


def _projected_B(w: np.ndarray, K: int) -> np.ndarray:
    return square_projected(w, K)


def duhamel_sweep(h0: np.ndarray, forcing: np.ndarray, dt: float) -> np.ndarray:
    """w_0 = h0, w_{n+1} = S w_n - Q forcing_n for n = 0 .. len(forcing) - 1."""
    K = h0.shape[-1] // 2
    S, Q = exp_factors(K, dt)
    out = np.empty((forcing.shape[0] + 1,) + h0.shape, dtype=complex)
    out[0] = h0
    for n in range(forcing.shape[0]):
        out[n + 1] = S * out[n] - Q * forcing[n]
    return out


@dataclass
class PicardResult:
    traj: Trajectory
    iterations: int
    factors: list
    status: str
    residual: float

    def __iter__(self):
        return iter((self.traj, self.iterations, self.factors))

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _picard(h0: np.ndarray, times, forcing_fn, cfg: SolverConfig, start=None) -> PicardResult:
    """Generic trajectory-to-trajectory Picard loop for x -> sweep(h0, forcing_fn(x))."""
    K = cfg.K
    dt = cfg.dt
    Sfull = np.stack([semigroup_factor(K, t) for t in times])
    x = Sfull * h0 if start is None else start
    factors = []
    prev = None
    status = "max-iterations"
    iters = 0
    res = math.inf
    for it in range(1, cfg.picard_max + 1):
        new = duhamel_sweep(h0, forcing_fn(x[:-1]), dt)
        iters = it
        res = _array_eps_norm(times, new - x, cfg.epsilon)
        if prev is not None and prev > 0:
            factors.append(res / prev)
        prev = res
        x = new
        if not np.all(np.isfinite(x)) or _array_eps_norm(times, x, cfg.epsilon) > 10.0 * cfg.rho:
            status = "diverged"
            break
        if res < cfg.picard_tol:
            # converged means the iteration contracted at every step
            status = "converged" if all(f < 1.0 for f in factors) else "non-contracting"
            break
        if len(factors) >= 3 and all(f > 1.0 for f in factors[-3:]):
            status = "non-contracting"
            break
    traj = Trajectory(times, x, epsilon=cfg.epsilon)
    return PicardResult(traj, iters, factors, status, res)


def time_grid(cfg: SolverConfig) -> np.ndarray:
    return cfg.dt * np.arange(cfg.steps + 1)


def _z_on_grid(z_path, cfg: SolverConfig, times) -> np.ndarray:
    K = cfg.K
    if z_path is None:
        return np.zeros((times.size, 2 * K + 1, 2 * K + 1), dtype=complex)
    arr = z_path.fields if isinstance(z_path, Trajectory) else np.asarray(z_path)
    if arr.shape[0] != times.size:
        raise ValueError("z path must be given on the solver grid (including t = 0)")
    return resize(arr, K)


def picard_solve(h0: SpectralField, z_path, cfg: SolverConfig) -> PicardResult:
    """Fixed point of the mild map for v, starting from v^(0)(t) = S(t) h0.

    `z_path` is a Trajectory or array of z on the solver grid (or None for
    z = 0).  Returns a PicardResult that unpacks as (trajectory, iterations,
    contraction factors); `status` is converged, diverged (iterate above
    10 rho), non-contracting (three factors above 1 in a row) or
    max-iterations.
    """
    times = time_grid(cfg)
    K = cfg.K
    h = resize(h0.coeffs, K)
    z = _z_on_grid(z_path, cfg, times)

    def forcing(v):
        return _projected_B(v + z[:-1], K)

    return _picard(h, times, forcing, cfg)


def picard_residual(result: PicardResult, h0: SpectralField, z_path, cfg: SolverConfig) -> float:
    """||T v - v||_{eps,T} for the returned trajectory."""
    times = time_grid(cfg)
    z = _z_on_grid(z_path, cfg, times)
    v = result.traj.fields
    Tv = duhamel_sweep(resize(h0.coeffs, cfg.K), _projected_B(v[:-1] + z[:-1], cfg.K), cfg.dt)
    return _array_eps_norm(times, Tv - v, cfg.epsilon)


def solve_with_shrink(h0: SpectralField, z_path, cfg: SolverConfig):
    """picard_solve, retried once on [0, T/2] when the first attempt does not converge.

    Returns (result, halved) where halved tells whether the shorter horizon was used.
    """
    res = picard_solve(h0, z_path, cfg)
    if res.converged:
        return res, False
    half = SolverConfig(**{**asdict(cfg), "T": cfg.T / 2})
    n = half.steps
    if z_path is not None:
        arr = z_path.fields if isinstance(z_path, Trajectory) else np.asarray(z_path)
        z_path = arr[: n + 1]
    return picard_solve(h0, z_path, half), True


def picard_march(h0: SpectralField, z_path, cfg: SolverConfig, window: int = 10,
                 R: float | None = None, steps: int | None = None) -> PicardResult:
    """picard_solve over consecutive windows of `window` steps, restarting from the last value.

    The discrete fixed-point map is causal (step n+1 only sees step n), so the
    windowed solution is the same grid function as a global Picard solve,
    while each window contracts in at most window + 1 iterations.  The status
    is the worst window status; factors and iterations are concatenated and
    summed.  Stops at the first window that fails, after `steps` steps if
    given, and with R after the window in which ||v(t) - S(t) h0||_{H^{1+eps}}
    first reaches R (the exit time is then in traj.tau_R).
    """
    if window < 1:
        raise ValueError("window must be at least one step")
    times = time_grid(cfg)
    z = _z_on_grid(z_path, cfg, times)
    K = cfg.K
    fields = [resize(h0.coeffs, K).astype(complex)]
    factors, iters, status, res = [], 0, "converged", 0.0
    n = 0
    total = cfg.steps if steps is None else min(int(steps), cfg.steps)
    h = fields[0]
    tau = None
    while n < total:
        w = min(window, total - n)
        sub = SolverConfig(**{**asdict(cfg), "T": w * cfg.dt})
        out = picard_solve(SpectralField(fields[-1], check=False), z[n:n + w + 1], sub)
        factors.extend(out.factors)
        iters += out.iterations
        res = max(res, out.residual)
        fields.extend(out.traj.fields[1:])
        n += w
        if not out.converged:
            status = out.status
            break
        if R is not None:
            for j in range(n - w + 1, n + 1):
                d = fields[j] - semigroup_factor(K, times[j]) * h
                if math.sqrt(float(hs_norm_sq_array(d, 1.0 + cfg.epsilon))) >= R:
                    tau = float(times[j])
                    break
            if tau is not None:
                break
    tt = times[: len(fields)]
    traj = Trajectory(tt, np.stack(fields), epsilon=cfg.epsilon, tau_R=tau)
    return PicardResult(traj, iters, factors, status, res)


def stopping_time_scan(v: Trajectory, h0: SpectralField, epsilon: float, R: float):
    """First grid time t > 0 with ||v(t) - S(t) h0||_{H^{1+eps}} >= R, or None."""
    K = v.K
    h = resize(h0.coeffs, K)
    for t, f in zip(v.times, v.fields):
        if t <= 0:
            continue
        d = f - semigroup_factor(K, t) * h
        if math.sqrt(float(hs_norm_sq_array(d, 1.0 + epsilon))) >= R:
            return float(t)
    return None


# ---------------------------------------------------------------------------
# second-order expansion


def _accumulate_zeta(Jacc: np.ndarray, z: np.ndarray, dt: float, N: float) -> np.ndarray:
    """calJ <- e^{-dt|k|^4} calJ + Q(dt) J^N(z) on the box of Jacc."""
    KJ = Jacc.shape[-1] // 2
    S, Q = exp_factors(KJ, dt)
    J = resize(j_array(z, N, "fft"), KJ)
    out = S * Jacc + Q * J
    out[..., KJ, KJ] = 0.0
    return out


def zeta_evolve(state: OUEnsembleState, dt: float, N: float, spec: NoiseSpec,
                advance_z: bool = True) -> OUEnsembleState:
    """Advance the zeta accumulators with the left-endpoint J^N(z), then z itself.

    calJ_k <- e^{-|k|^4 dt} calJ_k + (1 - e^{-dt|k|^4}) / |k|^4 J^N_k(z) for
    k != 0.  With advance_z=False the OU modes stay frozen (test mode).
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    KJ = 2 * max(box_radius(N), 1)
    Jacc = state.J if state.J is not None else np.zeros(state.z.shape[:-2] + (2 * KJ + 1, 2 * KJ + 1),
                                                        dtype=complex)
    Jacc = _accumulate_zeta(resize(Jacc, KJ), state.z, dt, N)
    if advance_z:
        new = ou_step(state, dt, spec)
        new.J = Jacc
        return new
    return OUEnsembleState(K=state.K, time=state.time + dt, z=state.z, J=Jacc, rng=state.rng)


def zeta_field(state: OUEnsembleState) -> np.ndarray:
    """zeta_k = -|k|^2 calJ_k."""
    if state.J is None:
        return np.zeros_like(state.z)
    return -ksq(state.J.shape[-1] // 2) * state.J


def zeta_path(z: np.ndarray, dt: float, N: float, K: int | None = None) -> np.ndarray:
    """zeta on the grid for a z path given at t_n = n dt, same recursion as zeta_evolve.

    Returned on the box of half-width K (default: the box of z).
    """
    K = z.shape[-1] // 2 if K is None else K
    KJ = 2 * max(box_radius(N), 1)
    Jacc = np.zeros((2 * KJ + 1, 2 * KJ + 1), dtype=complex)
    out = np.zeros((z.shape[0], 2 * K + 1, 2 * K + 1), dtype=complex)
    q = ksq(KJ)
    for n in range(z.shape[0] - 1):
        Jacc = _accumulate_zeta(Jacc, z[n], dt, N)
        out[n + 1] = resize(-q * Jacc, K)
    return out


def second_order_solve(h0: SpectralField, z_path, cfg: SolverConfig, N: float | None = None,
                       zeta=None) -> PicardResult:
    """Picard solve of the u-equation; h = u + zeta + z.

    zeta is generated from the same z path by the left-endpoint recursion with
    Galerkin radius N (default: the whole storage box, so that u + zeta
    reproduces the v-iteration step for step).  The forcing is
    B(u + zeta + z, u + zeta + z) - B(z, z), i.e. all terms of the
    u-equation.  The zeta path is stored in traj.extra["zeta"].
    """
    times = time_grid(cfg)
    K = cfg.K
    z = _z_on_grid(z_path, cfg, times)
    if N is None:
        N = K * math.sqrt(2.0)
    if zeta is None:
        zeta = zeta_path(z, cfg.dt, N, K)
    else:
        zeta = resize(np.asarray(zeta), K)
    h = resize(h0.coeffs, K)
    base = _projected_B(z[:-1], K)

    def forcing(u):
        w = u + zeta[:-1] + z[:-1]
        return _projected_B(w, K) - base

    res = _picard(h, times, forcing, cfg)
    res.traj.extra["zeta"] = zeta
    return res


# ---------------------------------------------------------------------------
# estimate ingredients and an independent ODE oracle


def _trapezoid(times, vals) -> float:
    t = np.asarray(times, dtype=float)
    v = np.asarray(vals, dtype=float)
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))


def z1_estimate(z: np.ndarray, times, alpha: float, q: float, G: int = 64) -> float:
    """(int_0^T ||z||^q_{W^{alpha,q}} dt)^{1/q} by the trapezoid rule on the grid."""
    vals = [wsp_norm_estimate(SpectralField(c, check=False), alpha, q, G) ** q if np.any(c) else 0.0
            for c in z]
    return _trapezoid(times, vals) ** (1.0 / q)


def z2_estimate(z: np.ndarray, times, gamma_prime: float, q_prime: float) -> float:
    """(int_0^T ||B(z,z)||^{q'}_{H^{-gamma'}} dt)^{1/q'} by the trapezoid rule."""
    B = bilinear_array(z, z, "fft")
    vals = np.sqrt(hs_norm_sq_array(B, -gamma_prime)) ** q_prime
    return _trapezoid(times, vals) ** (1.0 / q_prime)


def galerkin_ode_rk4(h0: SpectralField, T: float, dt: float, K: int) -> np.ndarray:
    """Classical RK4 for dh/dt = -|k|^4 h - B(h, h) projected on the box K; returns h(T).

    Uses the padded-convolution path for B, independent of the solver's grid evaluation.
    """
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a positive integer multiple of dt")
    lam = ksq(K) ** 2

    def rhs(h):
        return -lam * h - resize(bilinear_array(h, h, "fft"), K)

    h = resize(h0.coeffs, K).astype(complex)
    for _ in range(n):
        k1 = rhs(h)
        k2 = rhs(h + 0.5 * dt * k1)
        k3 = rhs(h + 0.5 * dt * k2)
        k4 = rhs(h + dt * k3)
        h = h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return h


def restrict_galerkin_path(z: np.ndarray, N: float) -> np.ndarray:
    """pi_N applied to every field of a path, keeping the box size."""
    K = z.shape[-1] // 2
    return resize(galerkin_restrict(z, N), K)


# ---------------------------------------------------------------------------
# unbiased Monte-Carlo for time-integrated chaos
#
# Left-endpoint stepping of zeta over-counts the variance of every pair of
# modes whose OU correlation time |m|^{-4} is shorter than dt, which biases
# E||zeta^N||^2 upward more and more as N grows.  Instead, for an integral
# I = int_0^t f(r) dr along one path, draw M independent times r_i from a
# density p and use the U-statistic over distinct pairs,
#     (|sum_i g_i|^2 - sum_i |g_i|^2) / (M (M - 1)),   g_i = f(r_i) / p(r_i),
# whose expectation is exactly E|I|^2.  The OU modes are sampled exactly at
# the sorted times, so there is no discretisation error at all.


def _time_points(rng: np.random.Generator, t: float, M: int, u_min: float,
                 w_uniform: float = 0.5):
    """M times in (0, t) from a mixture of uniform and log-uniform in t - r; returns (r, p(r))."""
    L = math.log(t / u_min)
    pick = rng.random(M) < w_uniform
    u = np.where(pick, t * rng.random(M), u_min * np.exp(L * rng.random(M)))
    u = np.clip(u, 1e-300, t)
    dens = w_uniform / t + np.where(u >= u_min, (1.0 - w_uniform) / (u * L), 0.0)
    order = np.argsort(-u)
    return t - u[order], dens[order]


def _pair_ustat(g: np.ndarray) -> np.ndarray:
    """(|sum g|^2 - sum |g|^2) / (M (M - 1)) along the first axis, elementwise in the rest."""
    M = g.shape[0]
    s = g.sum(axis=0)
    return ((s.real ** 2 + s.imag ** 2) - np.sum(g.real ** 2 + g.imag ** 2, axis=0)) / (M * (M - 1))


def _u_min(N: float, t: float) -> float:
    lam_top = (2.0 * (2.0 * N) ** 2) ** 2
    return min(t, 0.02 / lam_top)


def _mc_summary(samples) -> dict:
    x = np.asarray(samples, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return {"mean": float(x.mean()), "stderr": se, "n": int(x.size)}


def zeta_norm_mc(N: float, s: float, t: float, spec: NoiseSpec, replicas: int, seed: int,
                 points: int = 8) -> dict:
    """Unbiased MC for E||zeta^N(t)||^2 in H^s (randomized time pairs, exact OU sampling)."""
    from .ou import replica_rng, sample_z_replica
    if points < 2:
        raise ValueError("need at least two time points per replica")
    Kn = max(box_radius(N), 1)
    KJ = 2 * Kn
    q = ksq(KJ)
    lam = q * q
    w = np.zeros_like(q)
    w[q > 0] = q[q > 0] ** (s + 2.0)
    u_min = _u_min(N, t)
    out = np.empty(replicas)
    for r in range(replicas):
        rt, p = _time_points(replica_rng(seed, r, 1), t, points, u_min)
        z = sample_z_replica(spec, rt, Kn, seed, r)
        J = j_array(z, N, "fft")
        g = np.exp(-lam * (t - rt)[:, None, None]) * J / p[:, None, None]
        out[r] = float(np.sum(w * _pair_ustat(g)))
    res = _mc_summary(out)
    res["samples"] = out
    return res


def _bzeta_at(z_r: np.ndarray, z_t: np.ndarray, r: float, t: float, L: float) -> np.ndarray:
    """sum_{a+b=k} (a.b) Y_a z^L_b(t), Y_a = -|a|^2 e^{-|a|^4 (t - r)} J^L_a(r)."""
    from .nonlinearity import dot_convolution
    J = j_array(z_r, L, "fft")
    KJ = J.shape[-1] // 2
    q = ksq(KJ)
    Y = -q * np.exp(-q * q * (t - r)) * J
    return dot_convolution(Y, galerkin_restrict(z_t, L), "fft")


def bzeta_cauchy_mc(N: float, gamma: float, t: float, spec: NoiseSpec, replicas: int,
                    seed: int, points: int = 8) -> dict:
    """Unbiased MC for E||B(zeta^N, z^N) - B(zeta^{2N}, z^{2N})||^2 in H^{-2-gamma}."""
    from .ou import replica_rng, sample_z_replica
    K2 = max(box_radius(2 * N), 1)
    u_min = _u_min(2 * N, t)
    out = np.empty(replicas)
    wk = None
    for r in range(replicas):
        rt, p = _time_points(replica_rng(seed, r, 1), t, points, u_min)
        z = sample_z_replica(spec, np.append(rt, t), K2, seed, r)
        zt = z[-1]
        g = []
        for i in range(points):
            big = _bzeta_at(z[i], zt, rt[i], t, 2 * N)
            small = _bzeta_at(z[i], zt, rt[i], t, N)
            g.append((big - resize(small, big.shape[-1] // 2)) / p[i])
        g = np.stack(g)
        if wk is None:
            from .spectral import kpow
            wk = kpow(g.shape[-1] // 2, -2.0 * gamma)
        out[r] = float(np.sum(wk * _pair_ustat(g)))
    res = _mc_summary(out)
    res["samples"] = out
    return res
