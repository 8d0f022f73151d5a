"""Experiment runners behind the command line.

Each ``run_*`` takes a validated :class:`~tempflow.config.ExperimentConfig`
and returns an :class:`ExperimentResult`: the CSV tables to write plus the
raw arrays, so tests can check the same numbers the CLI emits.  Runs are
deterministic in the config (including its seed); replication ``r`` uses
seed ``cfg.seed + r``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tempflow import __version__
from tempflow.bounds import (
    A_constant,
    constants_for_gaussian,
    fr_envelope_constants,
    prop22_rhs,
    prop24_rhs,
    prop25_gap,
    prop28_rhs,
)
from tempflow.config import ExperimentConfig
from tempflow.gaussian_flows import FlowKind, integrate_flow, kl_along
from tempflow.metrics import MmdConfig, MmdToReference, gaussian_fit_kl
from tempflow.models import geometric_interpolant, kl_gaussian
from tempflow.samplers import (
    DegenerateWeightsError,
    SamplerConfig,
    ess,
    iteration_rng,
    run_sampler,
)
from tempflow.schedules import AdaptiveScheduleState, FixedSchedule, alpha_tilde, beta_value, discrete_alpha

# spawn key of the stream that draws MMD reference samples; iterations never reach it
REFERENCE_STREAM = 2**32


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[tuple] = field(default_factory=list)

    def column(self, key: str) -> list:
        i = self.header.index(key)
        return [r[i] for r in self.rows]


@dataclass
class ExperimentResult:
    experiment: str
    tables: list[Table]
    data: dict = field(default_factory=dict)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def render_csv(table: Table) -> bytes:
    lines = [",".join(table.header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in table.rows)
    return ("\n".join(lines) + "\n").encode()


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def write_result(result: ExperimentResult, out_dir: str | Path, cfg: ExperimentConfig) -> Path:
    """Write every table as CSV, then the manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sums = {}
    for table in result.tables:
        payload = render_csv(table)
        _atomic_write(out / table.name, payload)
        sums[table.name] = hashlib.sha256(payload).hexdigest()
    manifest = {
        "experiment": result.experiment,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "paper_scale": cfg.paper_scale,
        "version": __version__,
        "files": dict(sorted(sums.items())),
    }
    path = out / "manifest.json"
    _atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def reference_rng(seed: int) -> np.random.Generator:
    return iteration_rng(seed, REFERENCE_STREAM)


def _mmd(tp, seed: int, size: int, cfg: ExperimentConfig) -> MmdToReference:
    ref = tp.sample_pi(reference_rng(seed), size)
    return MmdToReference(ref, MmdConfig(cfg.metrics.bandwidth, cfg.metrics.estimator))


def _flow_kind(name: str, schedule, attractor: str) -> FlowKind:
    tempered = name.startswith("T-")
    base = name[2:] if tempered else name
    return FlowKind(base, tempered, schedule if tempered else None, attractor)


def _moment_header(d: int) -> list[str]:
    return [f"mean_{i}" for i in range(d)] + [f"cov_{i}_{j}" for i in range(d) for j in range(d)]


# -- flows ---------------------------------------------------------------------


def run_flows(cfg: ExperimentConfig) -> ExperimentResult:
    fb = cfg.flows
    tp = cfg.model.pair()
    schedule = cfg.schedule.build(horizon=fb.t_end)
    d = tp.dim
    tables, data = [], {}
    for name in fb.kinds:
        traj = integrate_flow(_flow_kind(name, schedule, fb.fr_attractor), tp, fb.t_end, fb.dt, fb.record_every)
        ts, kl = kl_along(traj, tp.pi_gauss)
        rows = [
            (t, *m, *c.ravel(), k)
            for t, m, c, k in zip(ts, traj.means, traj.covs, kl)
        ]
        tables.append(Table(f"flows_{name}.csv", ["t", *_moment_header(d), "kl"], rows))
        data[name] = {"t": ts, "mean": traj.means, "cov": traj.covs, "kl": kl}
    return ExperimentResult("flows", tables, data)


# -- mixture: iterations to the MMD threshold ------------------------------------


def _mixture_schedule(name: str, cfg: ExperimentConfig, horizon: float):
    if name == "none":
        return FixedSchedule.constant()
    if name == "linear":
        return FixedSchedule.linear(horizon)
    if name == "exponential":
        return FixedSchedule.exponential(cfg.schedule.rate)
    return FixedSchedule.chehab()


def run_mixture(cfg: ExperimentConfig) -> ExperimentResult:
    mb = cfg.mixture
    grid = mb.paper_m_grid if cfg.paper_scale else mb.m_grid
    reps = mb.paper_replications if cfg.paper_scale else mb.replications
    every = 1 if cfg.paper_scale else cfg.metrics.every
    size = cfg.metrics.reference_size or mb.N
    algorithms = {"W": "tula", "WFR": "smc_twfr"}
    runs = Table("mixture_runs.csv", ["m", "method", "schedule", "seed", "iterations", "censored", "mmd2"])
    hits: dict = {}
    for m in grid:
        tp = cfg.model.pair(m=m)
        for rep in range(reps):
            seed = cfg.seed + rep
            mmd = _mmd(tp, seed, size, cfg)
            for method in mb.methods:
                for sname in mb.schedules:
                    schedule = _mixture_schedule(sname, cfg, mb.gamma * mb.T)
                    state = {"hit": None, "last": math.nan}

                    def monitor(ps, n):
                        if n % every == 0 or n == mb.T:
                            state["last"] = mmd(ps)
                            if state["last"] < cfg.metrics.threshold:
                                state["hit"] = n
                                return True
                        return False

                    run_sampler(algorithms[method], tp, SamplerConfig(mb.N, mb.T, mb.gamma, schedule, seed), monitor)
                    # runs that never cross the threshold count as the full budget
                    iters = mb.T if state["hit"] is None else state["hit"]
                    runs.rows.append((m, method, sname, seed, iters, state["hit"] is None, state["last"]))
                    hits.setdefault((m, method, sname), []).append(iters)
    summary = Table("mixture_summary.csv", ["m", "method", "schedule", "mean_iterations", "percent_of_budget", "replications"])
    for (m, method, sname), its in hits.items():
        mean = float(np.mean(its))
        summary.rows.append((m, method, sname, mean, 100.0 * mean / mb.T, len(its)))
    return ExperimentResult("mixture", [runs, summary], {"iterations": {k: np.array(v) for k, v in hits.items()}, "budget": mb.T})


# -- SMC-T-WFR vs tempering SMC ------------------------------------------------


def run_smc_compare(cfg: ExperimentConfig) -> ExperimentResult:
    sc = cfg.smc_compare
    tp = cfg.model.pair()
    pi = tp.pi_gauss
    kl_table = Table("smc_compare_kl.csv", ["gamma", "seed", "n", "t", "kl_exact", "kl_smc_twfr", "kl_tempering_smc"])
    ess_table = Table("smc_compare_ess.csv", ["gamma", "seed", "algorithm", "n", "ess", "relative_ess"])
    failures = Table("smc_compare_failures.csv", ["gamma", "seed", "algorithm", "n", "max_log_weight"])
    data = {}
    for gamma in sc.gammas:
        horizon = gamma * sc.T
        schedule = cfg.schedule.build(horizon=horizon)
        sub = max(1, math.ceil(gamma / sc.dt - 1e-9))
        traj = integrate_flow(FlowKind("WFR", True, schedule, sc.fr_attractor), tp, horizon, gamma / sub, record_every=sub)
        ts, exact = kl_along(traj, pi)
        per_gamma = {"t": ts, "exact": exact, "kl": {}, "relative_ess": {}}
        for s in range(sc.seeds):
            seed = cfg.seed + s
            curves = {}
            for alg in ("smc_twfr", "tempering_smc"):
                kls = []
                try:
                    run = run_sampler(alg, tp, SamplerConfig(sc.N, sc.T, gamma, schedule, seed), lambda ps, n: kls.append(gaussian_fit_kl(ps, pi)))
                    rel = run.relative_ess
                except DegenerateWeightsError as exc:
                    failures.rows.append((gamma, seed, alg, exc.n, exc.max_log_weight))
                    rel = np.full(len(kls), math.nan)
                curves[alg] = np.concatenate([kls, np.full(sc.T + 1 - len(kls), math.nan)])
                per_gamma["kl"].setdefault(alg, []).append(curves[alg])
                per_gamma["relative_ess"].setdefault(alg, []).append(rel)
                ess_table.rows.extend((gamma, seed, alg, n, r * sc.N, r) for n, r in enumerate(rel))
            kl_table.rows.extend(
                (gamma, seed, n, ts[n], exact[n], curves["smc_twfr"][n], curves["tempering_smc"][n]) for n in range(sc.T + 1)
            )
        data[gamma] = per_gamma
    return ExperimentResult("smc_compare", [kl_table, ess_table, failures], data)


# -- adaptive schedules on the mixture ------------------------------------------


def run_schedules(cfg: ExperimentConfig) -> ExperimentResult:
    sb = cfg.schedules
    tp = cfg.model.pair()
    seeds = sb.paper_seeds if cfg.paper_scale else sb.seeds
    size = cfg.metrics.reference_size or sb.N
    lam_table = Table("schedules_lambda.csv", ["seed", "variant", "n", "t", "lambda"])
    mmd_table = Table("schedules_mmd.csv", ["seed", "variant", "n", "mmd2"])
    data = {"lambda": {}, "mmd2": {}, "final_mmd2": {}}
    for s in range(seeds):
        seed = cfg.seed + s
        mmd = _mmd(tp, seed, size, cfg)
        for variant in sb.variants:
            if variant == "ula":
                schedule = FixedSchedule.constant()
            else:
                schedule = AdaptiveScheduleState(variant, beta_param=cfg.schedule.beta_param)
            trace = []

            def monitor(ps, n):
                if n % cfg.metrics.every == 0 or n == sb.T:
                    trace.append((n, mmd(ps)))
                return False

            run = run_sampler("tula", tp, SamplerConfig(sb.N, sb.T, sb.gamma, schedule, seed), monitor)
            lam_table.rows.extend((seed, variant, n, t, lam) for n, (t, lam) in enumerate(zip(run.ts, run.lambdas)))
            mmd_table.rows.extend((seed, variant, n, v) for n, v in trace)
            data["lambda"].setdefault(variant, []).append(run.lambdas)
            data["mmd2"].setdefault(variant, []).append(np.array([v for _, v in trace]))
            data["final_mmd2"].setdefault(variant, []).append(trace[-1][1])
            data["t"] = run.ts
    return ExperimentResult("schedules", [lam_table, mmd_table], data)


# -- bounds --------------------------------------------------------------------


def run_bounds(cfg: ExperimentConfig) -> ExperimentResult:
    bb = cfg.bounds
    tp = cfg.model.pair()
    mu0, pi = tp.mu0_gauss, tp.pi_gauss
    schedule = cfg.schedule.build(horizon=bb.t_end)
    pi_c = constants_for_gaussian(pi, bb.eps)
    mu0_c = constants_for_gaussian(mu0, bb.eps)
    A = A_constant(pi_c, mu0_c, tp.dim, mu0.second_moment())
    kl0 = kl_gaussian(mu0, pi)
    M, B = fr_envelope_constants(tp)

    tw = integrate_flow(FlowKind("W", True, schedule), tp, bb.t_end, bb.dt)
    tfr = integrate_flow(FlowKind("FR", True, schedule), tp, bb.t_end, bb.dt)
    _, kl_w = kl_along(tw, pi)
    _, kl_fr = kl_along(tfr, pi)
    grid = np.linspace(0.0, bb.t_end, bb.n_points)
    idx = np.searchsorted(tw.ts, grid - 1e-9 * bb.dt)

    table = Table("bounds.csv", ["t", "exact_kl", "prop22", "exact_kl_fr", "prop24", "gap25", "kl_diff25"])
    for t, i in zip(grid, idx):
        t = float(t)
        beta = beta_value(schedule, t)
        kl_upper = kl_gaussian(geometric_interpolant(tp, -math.expm1(-t)), pi)
        kl_beta = kl_gaussian(geometric_interpolant(tp, beta), pi)
        table.rows.append(
            (
                t,
                kl_w[i],
                prop22_rhs(t, schedule, pi_c.c, kl0, A),
                kl_fr[i],
                prop24_rhs(beta, M, B),
                prop25_gap(t, schedule, tp),
                kl_upper - kl_beta,
            )
        )

    pb = bb.prop28
    gammas = np.full(pb.n_steps, pb.gamma)
    lambdas = np.array([schedule(k * pb.gamma) for k in range(pb.n_steps)], dtype=float)
    alphas = discrete_alpha(gammas, lambdas)
    tilde = alpha_tilde(gammas)
    kl_rev = kl_gaussian(pi, mu0)
    md = Table("bounds_prop28.csv", ["n", "gamma", "lambda", "alpha", "alpha_tilde", "exact_kl", "prop28"])
    for n in range(1, pb.n_steps + 1):
        exact = kl_gaussian(geometric_interpolant(tp, float(alphas[n - 1])), pi)
        bound = prop28_rhs(alphas[:n], kl_rev) if alphas[0] > 0 else math.inf
        md.rows.append((n, pb.gamma, lambdas[n - 1], alphas[n - 1], tilde[n - 1], exact, bound))
    return ExperimentResult("bounds", [table, md], {"A": A, "M": M, "B": B})


# -- single sampler run --------------------------------------------------------


def run_sample(cfg: ExperimentConfig) -> ExperimentResult:
    sb = cfg.sampler
    tp = cfg.model.pair()
    schedule = cfg.schedule.build(horizon=sb.horizon())
    scfg = SamplerConfig(sb.N, sb.T, sb.gammas, schedule, cfg.seed, sb.resample_mode, sb.snapshot_every)
    mmd = _mmd(tp, cfg.seed, cfg.metrics.reference_size or sb.N, cfg)
    metrics = Table("metrics.csv", ["n", "mmd2", "ess", "kl"])

    def monitor(ps, n):
        if n % cfg.metrics.every == 0 or n == sb.T:
            kl = gaussian_fit_kl(ps, tp.pi_gauss) if tp.is_gaussian else ""
            metrics.rows.append((n, mmd(ps), ess(ps), kl))
        return False

    run = run_sampler(sb.algorithm, tp, scfg, monitor)
    d = tp.dim
    samples = Table("samples.csv", ["n", "t", "particle_id", *[f"x_{i}" for i in range(d)], "weight"])
    for ps in run.snapshots:
        samples.rows.extend((ps.n, ps.t, i, *x, w) for i, (x, w) in enumerate(zip(ps.positions, ps.weights)))
    ess_table = Table("ess.csv", ["n", "ess", "relative_ess"])
    ess_table.rows.extend((n, e, e / sb.N) for n, e in enumerate(run.ess))
    lam_table = Table("lambda.csv", ["n", "t", "lambda"])
    lam_table.rows.extend((n, t, lam) for n, (t, lam) in enumerate(zip(run.ts, run.lambdas)))
    return ExperimentResult("sample", [samples, ess_table, metrics, lam_table], {"run": run})


RUNNERS = {
    "flows": run_flows,
    "mixture": run_mixture,
    "smc_compare": run_smc_compare,
    "schedules": run_schedules,
    "bounds": run_bounds,
    "sample": run_sample,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg)
