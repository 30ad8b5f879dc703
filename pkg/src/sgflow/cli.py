"""Command-line front end: named experiments driven by strict JSON configs.

    sgflow run --config cfg.json [--seed S] [--out DIR]
    sgflow list

Each run writes one CSV per result table (floats with 17 significant digits)
and manifest.json echoing the resolved config, the derived solver exponents
and the check outcomes.  Exit codes: 0 ok, 1 experiment-level failure (no
usable result), 2 invalid config.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .mild import SolverConfig

TOP_KEYS = ("experiment", "seed", "replicas", "K", "N_list", "dt", "T", "noise", "solver",
            "operators", "output", "params")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
NA = "n/a"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# aggregation and replica scheduling


def aggregate(samples) -> dict:
    """Mean, standard error (sd / sqrt n, 'n/a' for a single sample) and quantiles."""
    x = np.asarray(list(samples), dtype=float)
    if x.size == 0:
        raise ValueError("cannot aggregate an empty sample")
    out = {"n": int(x.size), "mean": float(x.mean())}
    out["stderr"] = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else NA
    for q, v in zip(QUANTILES, np.quantile(x, QUANTILES)):
        out[f"q{int(round(100 * q)):02d}"] = float(v)
    return out


def workers() -> int:
    """Worker cap from SGFLOW_THREADS (default 1)."""
    raw = os.environ.get("SGFLOW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SGFLOW_THREADS must be an integer, got {raw!r}")
    return max(1, min(n, os.cpu_count() or 1))


def map_replicas(fn, items) -> list:
    """fn over items in order; a process pool when SGFLOW_THREADS > 1.

    Every replica owns its random stream, so the result is identical for any
    worker count.
    """
    items = list(items)
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# config handling


@dataclass
class Config:
    experiment: str
    seed: int = 12345
    replicas: int | None = None
    K: int | None = None
    N_list: list | None = None
    dt: float | None = None
    T: float | None = None
    noise: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    operators: dict = field(default_factory=dict)
    output: str | None = None
    params: dict = field(default_factory=dict)

    def get(self, name, default):
        v = getattr(self, name)
        return default if v is None else v

    def noise_spec(self, **defaults):
        from .ou import NoiseSpec
        d = {**defaults, **self.noise}
        bad = set(d) - {"beta", "c", "N"}
        if bad:
            raise ConfigError(f"unknown noise keys: {sorted(bad)}")
        return NoiseSpec(beta=float(d.get("beta", 0.0)), c=float(d.get("c", 1.0)), N=d.get("N"))

    def solver_config(self, **defaults) -> SolverConfig:
        allowed = {f.name for f in dc_fields(SolverConfig)}
        d = {**defaults, **self.solver}
        bad = set(d) - allowed
        if bad:
            raise ConfigError(f"unknown solver keys: {sorted(bad)}")
        for name in ("K", "dt", "T"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        return SolverConfig(**d)


def parse_config(raw: dict, seed: int | None = None, out: str | None = None) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    bad = set(raw) - set(TOP_KEYS)
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    if "experiment" not in raw:
        raise ConfigError("config needs an 'experiment' name")
    name = raw["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
    cfg = Config(**raw)
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.output = out
    defaults = EXPERIMENTS[name].defaults
    extra = set(cfg.params) - set(defaults)
    if extra:
        raise ConfigError(f"unknown params for {name}: {sorted(extra)}")
    cfg.params = {**defaults, **cfg.params}
    for key in ("noise", "solver", "operators", "params"):
        if not isinstance(getattr(cfg, key), dict):
            raise ConfigError(f"'{key}' must be an object")
    if cfg.replicas is not None and int(cfg.replicas) < 1:
        raise ConfigError("replicas must be positive")
    return cfg


# ---------------------------------------------------------------------------
# result container


@dataclass
class Result:
    tables: dict = field(default_factory=dict)      # name -> (columns, rows)
    checks: dict = field(default_factory=dict)      # name -> bool
    info: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def table(self, name, columns, rows):
        self.tables[name] = (list(columns), [list(r) for r in rows])

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return "" if v is None else str(v)


def write_table(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# experiments


def _trend_ok(means, ses, k: float = 2.0) -> list:
    """True where the next estimate exceeds the previous by no more than k combined SE."""
    return [bool(means[i + 1] - means[i] <= k * math.hypot(ses[i], ses[i + 1]))
            for i in range(len(means) - 1)]


def exp_h1_divergence(cfg: Config) -> Result:
    from .ou import h1_partial_sum, sample_z_batch
    from .spectral import ball_mask, hs_norm_sq_array
    p = cfg.params
    spec = cfg.noise_spec()
    t = p["t"]
    Ks = cfg.get("N_list", p["K_list"])
    sums = [h1_partial_sum(K, t, spec) for K in Ks]
    res = Result()
    rows = []
    for i, K in enumerate(Ks):
        inc = sums[i] - sums[i - 1] if i else None
        rows.append([K, sums[i], inc, inc / (math.pi * math.log(Ks[i] / Ks[i - 1])) if i else None])
    res.table("partial_sums", ["K", "analytic", "increment", "increment_over_pi_log_ratio"], rows)
    res.checks["grows"] = all(b > a for a, b in zip(sums, sums[1:]))
    if len(Ks) > 1 and Ks[-1] == 2 * Ks[-2]:
        inc = sums[-1] - sums[-2]
        res.checks["last_increment_pi_ln2_10pct"] = abs(inc / (math.pi * math.log(2.0)) - 1.0) < 0.10
    Kmc = p["mc_K"]
    n = cfg.get("replicas", 10000)
    z = sample_z_batch(spec, t, Kmc, n, cfg.seed)
    vals = hs_norm_sq_array(z * ball_mask(Kmc, Kmc), 1.0)
    a = aggregate(vals)
    exact = h1_partial_sum(Kmc, t, spec)
    res.table("monte_carlo", ["K", "replicas", "mc_mean", "mc_stderr", "analytic"],
              [[Kmc, n, a["mean"], a["stderr"], exact]])
    if n > 1:
        res.checks["mc_within_3se"] = abs(a["mean"] - exact) <= 3 * a["stderr"]
    return res


def exp_z_regularity(cfg: Config) -> Result:
    from .ou import sample_z_batch
    from .spectral import to_grid_array, wsp_grid_estimate
    p = cfg.params
    spec = cfg.noise_spec()
    Ks = cfg.get("N_list", p["K_list"])
    n = cfg.get("replicas", 50)
    res = Result()
    rows = []
    for s, pp in p["sp_list"]:
        means, ses = [], []
        for K in Ks:
            z = sample_z_batch(spec, p["t"], K, n, cfg.seed)
            vals = wsp_grid_estimate(to_grid_array(z, p["G"]), s, pp) ** pp
            a = aggregate(vals)
            se = a["stderr"] if a["stderr"] != NA else 0.0
            means.append(a["mean"])
            ses.append(se)
            rows.append([s, pp, K, n, a["mean"], se])
        ok = _trend_ok(means, ses)
        res.checks[f"no_growth_s{s}_p{pp}"] = all(ok)
    res.table("wsp_moments", ["s", "p", "K", "replicas", "mean", "stderr"], rows)
    return res


def exp_cauchy_bn(cfg: Config) -> Result:
    from .nonlinearity import hnorm_sq_of_bilinear_from_j, j_array, renorm_cauchy_diag
    from .ou import sample_z_batch
    from .spectral import resize
    p = cfg.params
    spec = cfg.noise_spec()
    Ns = cfg.get("N_list", p["N_list"])
    g, t = p["gamma"], p["t"]
    D = [renorm_cauchy_diag(N, 2 * N, g, t, spec) for N in Ns]
    res = Result()
    res.table("exact", ["N", "Nprime", "D"], [[N, 2 * N, d] for N, d in zip(Ns, D)])
    res.checks["decreasing"] = all(b < a for a, b in zip(D, D[1:]))
    if len(D) >= 2:
        ratio = D[-1] / D[-2]
        res.info["last_ratio"] = ratio
        res.checks["last_ratio_bound"] = ratio <= 2 ** -0.5 + 0.25
    Nmc = p["mc_N"]
    n = cfg.get("replicas", 10000)
    z = sample_z_batch(spec, t, 2 * Nmc, n, cfg.seed)
    big = j_array(z, 2 * Nmc, "fft")
    small = resize(j_array(z, Nmc, "fft"), big.shape[-1] // 2)
    vals = hnorm_sq_of_bilinear_from_j(big - small, g)
    a = aggregate(vals)
    exact = renorm_cauchy_diag(Nmc, 2 * Nmc, g, t, spec)
    res.table("monte_carlo", ["N", "Nprime", "replicas", "mc_mean", "mc_stderr", "exact"],
              [[Nmc, 2 * Nmc, n, a["mean"], a["stderr"], exact]])
    if n > 1:
        res.checks["mc_within_3se"] = abs(a["mean"] - exact) <= 3 * a["stderr"]
    return res


def exp_bn_moments(cfg: Config) -> Result:
    from .nonlinearity import hnorm_sq_of_bilinear_from_j, j_array, jk_second_moments, renorm_moment
    from .ou import NoiseSpec, sample_z_batch
    p = cfg.params
    spec = cfg.noise_spec()
    g, t = p["gamma"], p["t"]
    Ns = cfg.get("N_list", p["N_list"])
    res = Result()
    second = [renorm_moment(N, g, t, spec, 2)[0] for N in Ns]
    rows = [[N, m, (m - second[i - 1]) / second[i - 1] if i else None] for i, (N, m) in enumerate(zip(Ns, second))]
    res.table("second_moment", ["N", "exact", "relative_change"], rows)
    a, b = p["stable_pair"]
    if a in Ns and b in Ns:
        ma, mb = second[Ns.index(a)], second[Ns.index(b)]
        res.info["stable_pair_change"] = (mb - ma) / ma
        res.checks["change_below_10pct"] = abs(mb - ma) / ma < 0.10
    n = cfg.get("replicas", 1000)
    mrows, fourth_ok = [], []
    for N in p["mc_N_list"]:
        z = sample_z_batch(spec, t, max(int(N), 1), n, cfg.seed)
        nb = hnorm_sq_of_bilinear_from_j(j_array(z, N, "fft"), g)
        m2, m4 = aggregate(nb), aggregate(nb ** 2)
        bound = renorm_moment(N, g, t, spec, 4)[0]
        mrows.append([N, n, m2["mean"], m2["stderr"], renorm_moment(N, g, t, spec, 2)[0],
                      m4["mean"], m4["stderr"], bound])
        fourth_ok.append(m4["mean"] <= bound)
    res.table("monte_carlo", ["N", "replicas", "mc_second", "mc_second_stderr", "exact_second",
                              "mc_fourth", "mc_fourth_stderr", "hypercontractive_bound"], mrows)
    res.checks["fourth_below_bound"] = all(fourth_ok)
    # rough-noise threshold: E|J_k|^2 at one k as the Galerkin shell doubles
    k = tuple(p["threshold_k"])
    trows = []
    for beta, kind in ((p["threshold_betas"][0], "plateau"), (p["threshold_betas"][1], "growth")):
        vals = []
        for N in p["threshold_N_list"]:
            arr = jk_second_moments(N, t, NoiseSpec(beta=beta), "fft")
            K2 = arr.shape[-1] // 2
            vals.append(float(arr[k[0] + K2, k[1] + K2]))
        changes = [(y - x) / x for x, y in zip(vals, vals[1:])]
        for N, v, c in zip(p["threshold_N_list"], vals, [None] + changes):
            trows.append([beta, N, v, c])
        if kind == "plateau":
            res.checks[f"plateau_beta{beta}"] = abs(changes[-1]) < 0.05
        else:
            res.checks[f"no_plateau_beta{beta}"] = all(c > 0.20 for c in changes)
    res.table("threshold", ["beta", "N", "E_Jk_sq", "relative_change"], trows)
    return res


def _noisy_solve_replica(args):
    from .mild import solve_with_shrink, time_grid
    from .ou import sample_z_replica
    from .spectral import SpectralField
    cfg_s, spec, seed, r = args
    times = time_grid(cfg_s)
    K = cfg_s.K
    z = np.concatenate([np.zeros((1, 2 * K + 1, 2 * K + 1), dtype=complex),
                        sample_z_replica(spec, times[1:], K, seed, r)])
    out, halved = solve_with_shrink(SpectralField.zeros(K), z, cfg_s)
    return out.status, halved, max(out.factors) if out.factors else float("nan"), out.iterations


def exp_solve(cfg: Config) -> Result:
    from .mild import galerkin_ode_rk4, picard_solve
    from .spectral import SpectralField
    p = cfg.params
    res = Result()
    # noise off: compare with an RK4 oracle
    Kd = p["det_K"]
    h0 = SpectralField.from_modes({tuple(k): complex(*v) for k, v in p["det_h0"]}, Kd)
    det = SolverConfig(K=Kd, T=p["det_T"], dt=p["det_dt"], picard_tol=p["det_tol"], rho=1.0)
    out = picard_solve(h0, None, det)
    oracle = galerkin_ode_rk4(h0, p["det_T"], p["rk4_dt"], Kd)
    err = float(np.sqrt(np.sum(np.abs(out.traj.fields[-1] - oracle) ** 2)))
    res.table("noise_off", ["K", "T", "dt", "status", "iterations", "l2_error_vs_rk4"],
              [[Kd, det.T, det.dt, out.status, out.iterations, err]])
    res.checks["noise_off_l2_below_1e-6"] = err < 1e-6
    # noisy runs
    scfg = cfg.solver_config(epsilon=0.25, T=0.1, dt=1e-3, K=16, rho=5.0).validate()
    spec = cfg.noise_spec()
    n = cfg.get("replicas", 50)
    outs = map_replicas(_noisy_solve_replica, [(scfg, spec, cfg.seed, r) for r in range(n)])
    rows = [[r, st, h, f, it] for r, (st, h, f, it) in enumerate(outs)]
    res.table("noisy_replicas", ["replica", "status", "halved", "max_factor", "iterations"], rows)
    good = sum(st == "converged" for st, *_ in outs)
    first = sum(st == "converged" and not h for st, h, *_ in outs)
    res.info.update(converged=good, converged_without_halving=first, replicas=n)
    res.checks["contracting_fraction_95pct"] = good / n >= 0.95
    for st, h, *_ in outs:
        if st != "converged":
            res.warnings.append(f"replica did not contract after halving T: {st}")
    return res


def exp_solve_rough(cfg: Config) -> Result:
    p = cfg.params
    scfg = cfg.solver_config(epsilon=0.3, T=0.05, dt=1e-3, K=8, rho=5.0, beta=p["beta"]).validate()
    spec = cfg.noise_spec(beta=p["beta"])
    n = cfg.get("replicas", 10)
    outs = map_replicas(_noisy_solve_replica, [(scfg, spec, cfg.seed, r) for r in range(n)])
    res = Result()
    res.table("rough_replicas", ["replica", "status", "halved", "max_factor", "iterations"],
              [[r, *o] for r, o in enumerate(outs)])
    good = sum(o[0] == "converged" for o in outs)
    res.info.update(converged=good, replicas=n)
    if good == 0:
        res.warnings.append("no replica converged")
    return res


def _consistency_replica(args):
    from .mild import picard_solve, second_order_solve, time_grid, _array_eps_norm
    from .ou import sample_z_replica
    from .spectral import SpectralField
    scfg, spec, seed, r, h0m = args
    times = time_grid(scfg)
    K = scfg.K
    z = np.concatenate([np.zeros((1, 2 * K + 1, 2 * K + 1), dtype=complex),
                        sample_z_replica(spec, times[1:], K, seed, r)])
    h0 = SpectralField.from_modes(h0m, K)
    v = picard_solve(h0, z, scfg)
    u = second_order_solve(h0, z, scfg)
    diff = _array_eps_norm(times, u.traj.fields + u.traj.extra["zeta"] - v.traj.fields, scfg.epsilon)
    return v.status, u.status, diff


def exp_second_order(cfg: Config) -> Result:
    from .mild import bzeta_cauchy_mc, zeta_norm_mc
    from .ou import NoiseSpec
    from .wick import bzeta_cauchy_moment, zeta_norm_moment
    p = cfg.params
    res = Result()
    parts = p["parts"]
    if "a" in parts:
        spec = NoiseSpec(beta=p["zeta_beta"])
        rows, means, ses = [], [], []
        for N in p["zeta_N_list"]:
            mc = zeta_norm_mc(N, p["zeta_s"], p["t"], spec, p["zeta_replicas"], cfg.seed, p["zeta_points"])
            ex = zeta_norm_moment(N, p["zeta_s"], p["t"], spec) if p["zeta_exact"] else None
            rows.append([N, p["zeta_replicas"], mc["mean"], mc["stderr"], ex])
            means.append(mc["mean"])
            ses.append(mc["stderr"])
        res.table("zeta_norm", ["N", "replicas", "mc_mean", "mc_stderr", "exact"], rows)
        res.checks["zeta_bounded_2se"] = all(_trend_ok(means, ses))
    if "b" in parts:
        spec = NoiseSpec(beta=p["zeta_beta"])
        vals = {N: bzeta_cauchy_moment(N, p["bzeta_gamma"], p["t"], spec) for N in p["bzeta_N_list"]}
        rows = [[N, 2 * N, vals[N], N in p["bzeta_test_N"]] for N in p["bzeta_N_list"]]
        for N in p["bzeta_mc_N"]:
            mc = bzeta_cauchy_mc(N, p["bzeta_gamma"], p["t"], spec, p["bzeta_mc_replicas"], cfg.seed)
            res.info.setdefault("bzeta_mc", []).append({"N": N, **{k: v for k, v in mc.items() if k != "samples"}})
        res.table("bzeta_cauchy", ["N", "Nprime", "exact", "in_test"], rows)
        test = [vals[N] for N in p["bzeta_test_N"]]
        res.checks["bzeta_decreasing"] = all(b < a for a, b in zip(test, test[1:]))
    if "c" in parts:
        scfg = cfg.solver_config(epsilon=0.3, T=0.05, dt=1e-3, K=8, picard_tol=1e-10,
                                 rho=5.0, beta=p["consistency_beta"])
        scfg.validate(second_order=True)
        scfg.validate()
        spec = NoiseSpec(beta=p["consistency_beta"])
        h0m = {tuple(k): complex(*v) for k, v in p["h0"]}
        n = cfg.get("replicas", 10)
        outs = map_replicas(_consistency_replica, [(scfg, spec, cfg.seed, r, h0m) for r in range(n)])
        res.table("consistency", ["replica", "v_status", "u_status", "eps_norm_difference"],
                  [[r, *o] for r, o in enumerate(outs)])
        both = [d for sv, su, d in outs if sv == "converged" and su == "converged"]
        res.info.update(coupled_converged=len(both), replicas=n)
        if not both:
            res.warnings.append("no replica converged in both decompositions")
            res.checks["consistency"] = False
        else:
            res.checks["consistency"] = max(both) < 5 * scfg.picard_tol
    return res


def _family(cfg: Config, key: str, default: dict):
    from .regularization import family_from_dict
    return family_from_dict(cfg.operators.get(key, default))


def exp_regularize_z(cfg: Config) -> Result:
    from .regularization import convergence_experiment_z
    p = cfg.params
    Ns = cfg.get("N_list", p["N_list"])
    times = np.linspace(p["t_max"] / p["nt"], p["t_max"], p["nt"])
    rows = convergence_experiment_z(_family(cfg, "phi", {"kind": "cutoff"}), Ns, p["s"], p["p"], times,
                                    cfg.get("replicas", 200), cfg.seed, K=cfg.get("K", 32),
                                    spec=cfg.noise_spec())
    res = Result()
    cols = ["N", "estimate", "stderr", "exact"]
    res.table("z_difference", cols, [[r[c] for c in cols] for r in rows])
    if all(r["exact"] is not None for r in rows):
        res.checks["within_3se"] = all(abs(r["estimate"] - r["exact"]) <= 3 * r["stderr"] for r in rows)
    est = [r["estimate"] for r in rows]
    res.checks["decreasing"] = all(b < a for a, b in zip(est, est[1:]))
    return res


def exp_regularize_bn(cfg: Config) -> Result:
    from .regularization import convergence_experiment_B
    p = cfg.params
    Ns = cfg.get("N_list", p["N_list"])
    times = np.linspace(p["t_max"] / p["nt"], p["t_max"], p["nt"])
    rows = convergence_experiment_B(_family(cfg, "phi", {"kind": "mollifier", "profile": "cosine"}),
                                    _family(cfg, "psi", {"kind": "cutoff"}), Ns, p["gamma"], times,
                                    p["mc_replicas"], cfg.seed, spec=cfg.noise_spec())
    res = Result()
    cols = ["N", "exact", "estimate", "stderr"]
    res.table("b_difference", cols, [[r[c] for c in cols] for r in rows])
    ex = [r["exact"] for r in rows]
    res.checks["strictly_decreasing"] = all(b < a for a, b in zip(ex, ex[1:]))
    return res


# ---------------------------------------------------------------------------
# stability in probability


@dataclass
class StabilityReport:
    N_list: list
    samples: dict
    excluded: dict
    fractions: dict
    deltas: list
    error_components: dict
    summaries: dict

    def medians(self) -> list:
        return [self.summaries[N]["q50"] for N in self.N_list]


def _stability_replica(args):
    from .mild import picard_march, time_grid
    from .regularization import coupled_paths
    from .spectral import SpectralField, hs_norm_sq_array, resize
    scfg, spec, ops_desc, Ns, seed, r, h0m, window = args
    from .regularization import operator_from_dict
    ops = [operator_from_dict(d) for d in ops_desc]
    times = time_grid(scfg)
    K = scfg.K
    z, zs = coupled_paths(ops, times[1:], K, seed, r, spec)
    zero = np.zeros((1, 2 * K + 1, 2 * K + 1), dtype=complex)
    z = np.concatenate([zero, z])
    h0 = SpectralField.from_modes(h0m, K)
    v = picard_march(h0, z, scfg, window=window, R=scfg.R)
    if not v.converged:
        return None
    m = v.traj.times.size
    out = []
    for zp in zs:
        zp = np.concatenate([zero, resize(zp, K)])
        w = picard_march(h0, zp, scfg, window=window, steps=m - 1)
        if not w.converged or w.traj.times.size != m:
            out.append(None)
            continue
        d = w.traj.fields - v.traj.fields
        out.append(float(np.sqrt(np.max(hs_norm_sq_array(d, 1.0 + scfg.epsilon)))))
    return out


def _error_components(Ns, scfg: SolverConfig, spec, times) -> dict:
    """Exact pieces of the stability error variable for spectral cutoffs.

    z-part: int_0^T ||pi_N z - z||^2 in H^alpha (tail sum over the storage box);
    B-part: int_0^T E||B_N(z,z) - B_M(z,z)||^2 in H^{-gamma'} with M the box
    diagonal, the truncated stand-in for the renormalised limit.
    """
    from .nonlinearity import renorm_cauchy_diag
    from .regularization import _trapezoid_from_zero, z_tail_oracle
    K = scfg.K
    Mbig = K * math.sqrt(2.0)
    g = scfg.gamma_prime - 2.0
    out = {}
    for N in Ns:
        zpart = z_tail_oracle(N, scfg.alpha, times, K, spec)
        bvals = [renorm_cauchy_diag(N, Mbig, g, t, spec) for t in times]
        out[N] = {"z_part": zpart, "B_part": _trapezoid_from_zero(times, bvals)}
    return out


def stability_experiment(cfg: Config) -> StabilityReport:
    p = cfg.params
    Ns = list(cfg.get("N_list", p["N_list"]))
    scfg = cfg.solver_config(epsilon=0.25, T=0.25, dt=1e-3, K=32, R=0.5, rho=5.0).validate()
    spec = cfg.noise_spec()
    fam = cfg.operators.get("phi", {"kind": "cutoff"})
    if fam.get("kind") not in ("cutoff", "identity", "mollifier"):
        raise ConfigError("stability needs a cutoff, identity or mollifier family")
    ops_desc = [{**fam, "N": N} if fam.get("kind") != "identity" else {"kind": "identity"} for N in Ns]
    h0m = {tuple(k): complex(*v) for k, v in p["h0"]}
    n = cfg.get("replicas", 50)
    outs = map_replicas(_stability_replica,
                        [(scfg, spec, ops_desc, Ns, cfg.seed, r, h0m, p["window"]) for r in range(n)])
    samples = {N: [] for N in Ns}
    excluded = {N: 0 for N in Ns}
    for o in outs:
        for i, N in enumerate(Ns):
            if o is None or o[i] is None:
                excluded[N] += 1
            else:
                samples[N].append(o[i])
    base = 0.1 * scfg.R
    deltas = [f * base for f in p["delta_factors"]]
    fractions = {N: [float(np.mean(np.asarray(samples[N]) > d)) if samples[N] else float("nan")
                     for d in deltas] for N in Ns}
    summaries = {N: aggregate(samples[N]) if samples[N] else {} for N in Ns}
    comps = {}
    if p["error_components"] and fam.get("kind") == "cutoff":
        times = np.linspace(scfg.T / p["nt"], scfg.T, p["nt"])
        comps = _error_components(Ns, scfg, spec, times)
    return StabilityReport(Ns, samples, excluded, fractions, deltas, comps, summaries)


def exp_stability(cfg: Config) -> Result:
    rep = stability_experiment(cfg)
    res = Result()
    rows = []
    for N in rep.N_list:
        s = rep.summaries[N]
        rows.append([N, s.get("n", 0), rep.excluded[N], s.get("mean"), s.get("stderr"),
                     *(s.get(f"q{int(round(100 * q)):02d}") for q in QUANTILES),
                     *rep.fractions[N],
                     rep.error_components.get(N, {}).get("z_part"),
                     rep.error_components.get(N, {}).get("B_part")])
    cols = (["N", "samples", "excluded", "mean", "stderr"]
            + [f"q{int(round(100 * q)):02d}" for q in QUANTILES]
            + [f"frac_above_{d:.3g}" for d in rep.deltas] + ["E_z_part", "E_B_part"])
    res.table("stability", cols, rows)
    if any(not rep.samples[N] for N in rep.N_list):
        res.warnings.append("some N have no usable replica")
        return res
    med = rep.medians()
    res.checks["median_strictly_decreasing"] = all(b < a for a, b in zip(med, med[1:]))
    j = rep.deltas.index(min(rep.deltas, key=lambda d: abs(d - cfg.params["delta_check"])))
    fr = [rep.fractions[N][j] for N in rep.N_list]
    res.checks["fraction_non_increasing"] = all(b <= a for a, b in zip(fr, fr[1:]))
    if rep.error_components:
        zc = [rep.error_components[N]["z_part"] for N in rep.N_list]
        bc = [rep.error_components[N]["B_part"] for N in rep.N_list]
        res.info["error_components_decreasing"] = (all(b < a for a, b in zip(zc, zc[1:]))
                                                   and all(b < a for a, b in zip(bc, bc[1:])))
    res.info["samples"] = {str(N): rep.samples[N] for N in rep.N_list}
    return res


def exp_sumsum(cfg: Config) -> Result:
    from .bounds import sumsum_bound_check
    p = cfg.params
    res = Result()
    rows = []
    for a, g in p["pairs"]:
        full = sumsum_bound_check(a, g, p["k_range"])
        half = sumsum_bound_check(a, g, p["k_range"] // 2)
        stable = abs(full["C"] - half["C"]) <= 0.10 * half["C"]
        rows.append([a, g, p["k_range"], full["shell"], full["C"], half["C"], full["tail_bound"],
                     full["verdict"], stable])
        res.checks[f"sumsum_{a}_{g}"] = full["verdict"] == "PASS" and stable
    res.table("sumsum", ["alpha", "gamma", "k_range", "shell", "C", "C_half_range", "tail_bound",
                         "verdict", "constant_stable"], rows)
    return res


def exp_bilinear_bounds(cfg: Config) -> Result:
    from .bounds import bsquare_constant_probe, cmixed_constant_probe, probe_trend
    p = cfg.params
    res = Result()
    rows = []
    a, b, g = p["bsquare"]
    vals = [bsquare_constant_probe(a, b, g, K, p["draws"], cfg.seed) for K in p["bsquare_K"]]
    tr = probe_trend(vals)
    rows += [["bsquare", a, b, g, K, v] for K, v in zip(p["bsquare_K"], vals)]
    res.checks["bsquare_stable_10pct"] = tr["stable"]
    a, b, g = p["negative"]
    vals = [bsquare_constant_probe(a, b, g, K, p["draws"], cfg.seed, check_margin=False) for K in p["bsquare_K"]]
    tr = probe_trend(vals)
    rows += [["negative_control", a, b, g, K, v] for K, v in zip(p["bsquare_K"], vals)]
    res.checks["negative_control_grows"] = tr["growing"]
    al, q, eps, g = p["cmixed"]
    vals = [cmixed_constant_probe(al, q, eps, g, K, p["draws"], cfg.seed, G=p["G"]) for K in p["cmixed_K"]]
    tr = probe_trend(vals)
    rows += [["cmixed", al, q, f"{eps}/{g}", K, v] for K, v in zip(p["cmixed_K"], vals)]
    res.checks["cmixed_stable_10pct"] = tr["stable"]
    res.table("probes", ["probe", "p1", "p2", "p3", "K", "sup_ratio"], rows)
    return res


@dataclass(frozen=True)
class Experiment:
    runner: object
    defaults: dict
    description: str


EXPERIMENTS = {
    "h1-divergence": Experiment(exp_h1_divergence, {"t": 1.0, "K_list": [16, 32, 64, 128, 256], "mc_K": 32},
                                "H^1 partial sums of z(t) grow like pi log K; MC check"),
    "z-regularity": Experiment(exp_z_regularity, {"t": 1.0, "K_list": [8, 16, 32], "G": 64,
                                                  "sp_list": [[0.5, 2], [0.5, 4], [0.9, 2]]},
                               "MC W^{s,p} moments of z(1) as K doubles"),
    "cauchy-bn": Experiment(exp_cauchy_bn, {"gamma": 0.5, "t": 1.0, "N_list": [4, 8, 16], "mc_N": 4},
                            "exact and MC Cauchy differences of B_N(z,z)"),
    "bn-moments": Experiment(exp_bn_moments, {"gamma": 0.5, "t": 1.0, "N_list": [4, 8, 16, 32],
                                              "stable_pair": [16, 32], "mc_N_list": [4, 8],
                                              "threshold_k": [1, 0], "threshold_betas": [0.5, 1.2],
                                              "threshold_N_list": [8, 16, 32, 64]},
                             "second and fourth moments of B_N(z,z); rough-noise threshold"),
    "solve": Experiment(exp_solve, {"det_K": 8, "det_T": 0.5, "det_dt": 1e-3, "det_tol": 1e-14,
                                    "rk4_dt": 1e-4, "det_h0": [[[1, 0], [1e-3, 0.0]]]},
                        "Picard solver: noise-off oracle and noisy contraction"),
    "solve-rough": Experiment(exp_solve_rough, {"beta": 0.5}, "Picard solver with rough noise"),
    "second-order-consistency": Experiment(exp_second_order, {
        "parts": ["a", "b", "c"], "t": 1.0,
        "zeta_beta": 0.8, "zeta_s": 1.1, "zeta_N_list": [8, 16, 32], "zeta_replicas": 1000,
        "zeta_points": 8, "zeta_exact": True,
        "bzeta_gamma": 0.6, "bzeta_N_list": [1, 2, 4, 8], "bzeta_test_N": [4, 8], "bzeta_mc_N": [],
        "bzeta_mc_replicas": 200,
        "consistency_beta": 0.5, "h0": [[[1, 0], [0.05, 0.0]], [[1, 1], [0.0, 0.02]]]},
        "second-order expansion: zeta regularity, B(zeta,z) Cauchy, u + zeta = v"),
    "regularize-z": Experiment(exp_regularize_z, {"N_list": [4, 8, 16], "s": 0.25, "p": 2, "t_max": 1.0, "nt": 10},
                               "coupled z^Phi_N - z differences vs exact tail sums"),
    "regularize-bn": Experiment(exp_regularize_bn, {"N_list": [4, 8, 16], "gamma": 0.5, "t_max": 1.0,
                                                    "nt": 10, "mc_replicas": 0},
                                "exact Wick B-differences for two regularization families"),
    "stability": Experiment(exp_stability, {"N_list": [4, 8, 16], "h0": [[[1, 0], [0.1, 0.0]], [[0, 1], [0.0, 0.05]]],
                                            "window": 10, "delta_factors": [0.5, 1.0, 2.0], "delta_check": 0.05,
                                            "error_components": True, "nt": 10},
                            "sup-difference of v and v^Phi_N on coupled noise"),
    "sumsum": Experiment(exp_sumsum, {"pairs": [[3, 3], [2, 2], [1.5, 2]], "k_range": 32},
                         "lattice convolution sums against their envelopes"),
    "bilinear-bounds": Experiment(exp_bilinear_bounds, {"bsquare": [0.5, 0.5, 0.5], "negative": [0.1, 0.1, 0.1],
                                                        "bsquare_K": [8, 16, 32], "cmixed": [0.9, 8, 0.5, 0.5],
                                                        "cmixed_K": [8, 16], "draws": 4, "G": 64},
                                  "bilinear constant probes with a sub-critical control"),
}


# ---------------------------------------------------------------------------
# entry points


def run_experiment(raw: dict, seed: int | None = None, out: str | None = None) -> tuple:
    """Parse, run and (if an output directory is set) write artifacts; returns (Config, Result)."""
    cfg = parse_config(raw, seed, out)
    res = EXPERIMENTS[cfg.experiment].runner(cfg)
    if cfg.output:
        write_artifacts(cfg, res)
    return cfg, res


def manifest(cfg: Config, res: Result) -> dict:
    sc = None
    try:
        sc = cfg.solver_config().to_dict()
    except (TypeError, ValueError):
        sc = None
    return _jsonable({
        "version": __version__,
        "config": asdict(cfg),
        "solver_resolved": sc,
        "e1": sc["e1"] if sc else None,
        "e2": sc["e2"] if sc else None,
        "probe_field_law": "complex Gaussian coefficients, E|u_k|^2 = |k|^-3.2",
        "checks": res.checks,
        "info": {k: v for k, v in res.info.items() if k != "samples"},
        "warnings": res.warnings,
        "tables": {name: cols for name, (cols, _) in res.tables.items()},
    })


def write_artifacts(cfg: Config, res: Result) -> None:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    for name, (cols, rows) in res.tables.items():
        write_table(out / f"{name}.csv", cols, rows)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest(cfg, res), fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sgflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one named experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    sub.add_parser("list", help="list experiments")
    args = ap.parse_args(argv)
    if args.cmd == "list":
        for name, e in EXPERIMENTS.items():
            print(f"{name:26s} {e.description}")
        return 0
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        cfg = parse_config(raw, args.seed, args.out)
        workers()
    except (OSError, json.JSONDecodeError, ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", RuntimeWarning)
            res = EXPERIMENTS[cfg.experiment].runner(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeWarning) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    if cfg.output:
        write_artifacts(cfg, res)
    for w in res.warnings:
        print(json.dumps({"warning": w}), file=sys.stderr)
    for name, ok in res.checks.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    if not res.tables:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
