"""Particle samplers.

* tempered ULA: Langevin steps with drift ``grad log pi_lambda``;
* SMC-T-WFR: tempered ULA moves followed by importance weights
  ``(pi / proposal mixture)^kappa_n`` and multinomial resampling;
* tempering SMC: tempered ULA moves with weights ``(pi/mu0)^(lambda_n - lambda_{n-1})``.

The schedule clock is global time ``t_n = gamma_1 + ... + gamma_n`` and the
move at iteration ``n`` uses ``lambda_n = lambda(t_n)``.  Weight arithmetic
stays in log space throughout.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from tempflow.models import TargetPair
from tempflow.schedules import AdaptiveScheduleState, FixedSchedule, step_adaptive

ALGORITHMS = ("tula", "smc_twfr", "tempering_smc")
WEIGHT_TOL = 1e-12
_BLOCK = 1024
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class SamplerDivergenceError(RuntimeError):
    """A drift or position became non-finite."""

    def __init__(self, message: str, particle: int | None = None, n: int | None = None):
        super().__init__(message)
        self.particle = particle
        self.n = n


class DegenerateWeightsError(RuntimeError):
    """All importance weights vanished or became NaN."""

    def __init__(self, message: str, n: int, max_log_weight: float):
        super().__init__(message)
        self.n = n
        self.max_log_weight = max_log_weight


@dataclass
class ParticleSystem:
    positions: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,), sums to one
    n: int = 0
    t: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        w = np.asarray(self.weights, dtype=float)
        if pos.shape[0] < 1:
            raise ValueError("a particle system needs at least one particle")
        if w.shape != (pos.shape[0],):
            raise ValueError(f"weights shape {w.shape} does not match {pos.shape[0]} particles")
        if not np.all(np.isfinite(pos)):
            raise SamplerDivergenceError("non-finite particle positions", int(np.argmin(np.isfinite(pos).all(axis=1))), self.n)
        if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must be finite, non-negative and sum to one")
        self.positions = pos
        self.weights = w

    @classmethod
    def uniform(cls, positions, n: int = 0, t: float = 0.0) -> ParticleSystem:
        positions = np.asarray(positions, dtype=float)
        size = positions.shape[0]
        return cls(positions, np.full(size, 1.0 / size), n, t)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.positions

    def cov(self) -> np.ndarray:
        diff = self.positions - self.mean()
        return (self.weights[:, None] * diff).T @ diff


def ess(ps: ParticleSystem) -> float:
    """Effective sample size ``1 / sum W_i^2``."""
    return float(1.0 / np.sum(ps.weights**2))


def normalise_log_weights(logw: np.ndarray, n: int) -> np.ndarray:
    """Normalised weights from log-weights via a single log-sum-exp."""
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    top = float(np.max(logw[finite])) if finite.any() else float("nan")
    if np.any(np.isnan(logw)) or not finite.any():
        raise DegenerateWeightsError(f"degenerate weights at iteration {n}", n, top)
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    return w


def iteration_rng(seed: int, n: int) -> np.random.Generator:
    """Independent Philox stream for iteration ``n`` of the run seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(n,))))


# -- schedules as seen by the samplers ----------------------------------------


def weight_exponent(schedule: Callable[[float], float], t_prev: float, gamma: float) -> float:
    """``kappa = int_0^gamma e^{s - gamma} lambda(t_prev + s) ds``.

    Exact when the schedule is constant, 16-point Gauss-Legendre otherwise.
    """
    if gamma <= 0.0:
        return 0.0
    upper = -math.expm1(-gamma)
    if isinstance(schedule, FixedSchedule) and schedule.kind == "constant":
        return schedule.value * upper
    s = 0.5 * gamma * (_GL_NODES + 1.0)
    if isinstance(schedule, FixedSchedule):
        lam = np.asarray(schedule(t_prev + s), dtype=float)
    else:
        lam = np.array([schedule(t_prev + si) for si in s])
    kappa = 0.5 * gamma * float(_GL_WEIGHTS @ (np.exp(s - gamma) * lam))
    return min(max(kappa, 0.0), upper)


class _ScheduleDriver:
    """Supplies ``lambda_n``: fixed schedules are evaluated, adaptive ones integrated."""

    def __init__(self, schedule, tp: TargetPair):
        self.tp = tp
        if isinstance(schedule, AdaptiveScheduleState):
            self.adaptive = copy.deepcopy(schedule)
            self.fixed = None
        else:
            self.adaptive = None
            self.fixed = schedule if schedule is not None else FixedSchedule.constant()

    def initial(self) -> float:
        return self.adaptive.lam if self.adaptive is not None else float(self.fixed(0.0))

    def advance(self, ps: ParticleSystem, t_prev: float, gamma: float) -> float:
        """``lambda`` at ``t_prev + gamma``; adaptive variants use the particle log-ratio variance."""
        if self.fixed is not None:
            return float(self.fixed(t_prev + gamma))
        if not self.adaptive.frozen:
            from tempflow.metrics import empirical_log_ratio_variance

            var = empirical_log_ratio_variance(ps, self.tp)
            step_adaptive(self.adaptive, gamma, lambda lam: var)
        else:
            self.adaptive.t += gamma
        return self.adaptive.lam

    def kappa(self, t_prev: float, gamma: float, lam_n: float) -> float:
        if self.fixed is not None:
            return weight_exponent(self.fixed, t_prev, gamma)
        # adaptive lambda is only known at the grid points: hold it over the step
        return lam_n * -math.expm1(-gamma)


# -- single steps -------------------------------------------------------------


def _drift(tp: TargetPair, x: np.ndarray, lam: float) -> np.ndarray:
    g = np.asarray(tp.grad_log_tempered(x, lam), dtype=float).reshape(x.shape)
    bad = ~np.isfinite(g).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise SamplerDivergenceError(f"non-finite drift at particle {i}", i)
    return g


def tula_step(ps: ParticleSystem, tp: TargetPair, lambda_n: float, gamma_n: float, rng: np.random.Generator) -> ParticleSystem:
    """``X <- X + gamma grad log pi_lambda(X) + sqrt(2 gamma) xi``; weights untouched."""
    if gamma_n < 0:
        raise ValueError("gamma_n must be non-negative")
    if gamma_n == 0.0:
        return ParticleSystem(ps.positions.copy(), ps.weights.copy(), ps.n, ps.t)
    x = ps.positions
    noise = rng.standard_normal(x.shape)
    new = x + gamma_n * _drift(tp, x, lambda_n) + math.sqrt(2.0 * gamma_n) * noise
    return ParticleSystem(new, ps.weights.copy(), ps.n, ps.t)


def proposal_mixture_logpdf(x, prev: ParticleSystem, tp: TargetPair, lambda_n: float, gamma_n: float) -> np.ndarray:
    """Log-density of ``sum_i W_i N(x; X_i + gamma grad log pi_n(X_i), 2 gamma I)``.

    With uniform weights (the case after resampling) this is the equal-weight
    mixture of the Langevin kernels.  ``x`` is a point or a batch ``(M, d)``.
    """
    if gamma_n <= 0:
        raise ValueError("the proposal mixture needs gamma_n > 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim < 2
    x = x.reshape(-1, prev.dim)
    centres = prev.positions + gamma_n * _drift(tp, prev.positions, lambda_n)
    var = 2.0 * gamma_n
    const = -0.5 * prev.dim * math.log(2.0 * math.pi * var)
    with np.errstate(divide="ignore"):
        logw = np.log(prev.weights)
    out = np.empty(len(x))
    # row blocks keep the N x M kernel matrix small
    for lo in range(0, len(x), _BLOCK):
        xb = x[lo : lo + _BLOCK]
        if prev.dim == 1:
            sq = (xb[:, :1] - centres[:, 0][None, :]) ** 2
        else:
            sq = np.sum(xb**2, axis=1)[:, None] - 2.0 * xb @ centres.T + np.sum(centres**2, axis=1)[None, :]
            sq = np.maximum(sq, 0.0)
        out[lo : lo + _BLOCK] = logsumexp(logw[None, :] - 0.5 * sq / var, axis=1) + const
    if not np.all(np.isfinite(out)):
        raise SamplerDivergenceError("proposal mixture density underflowed at every kernel")
    return float(out[0]) if single else out


def multinomial_resample(ps: ParticleSystem, rng: np.random.Generator) -> ParticleSystem:
    """Inverse-CDF multinomial resampling; output weights are uniform."""
    idx = resample_indices(ps.weights, rng)
    return ParticleSystem.uniform(ps.positions[idx], ps.n, ps.t)


def resample_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    u = rng.random(len(weights))
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(weights) - 1)


@dataclass
class SamplerConfig:
    """Run parameters.

    ``gammas`` is a scalar step or a length-``T`` sequence.  ``schedule`` is a
    callable ``lambda(t)`` (e.g. :class:`FixedSchedule`) or an
    :class:`AdaptiveScheduleState` template driven by particle variances.
    ``resample`` is ``"every_step"`` or ``("ess_threshold", tau)``.
    """

    N: int
    T: int
    gammas: float | Sequence[float] = 0.01
    schedule: object = None
    seed: int = 0
    resample: object = "every_step"
    snapshot_every: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        g = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        if g.size == 1:
            g = np.full(max(self.T, 1), g[0])
        if g.size < self.T:
            raise ValueError(f"need {self.T} step sizes, got {g.size}")
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise ValueError("step sizes must be positive")
        self._gammas = g
        if self.resample != "every_step":
            mode, tau = self.resample
            if mode != "ess_threshold" or not 0.0 < tau <= 1.0:
                raise ValueError(f"bad resample mode {self.resample!r}")

    def gamma(self, n: int) -> float:
        return float(self._gammas[n - 1])

    def should_resample(self, ps: ParticleSystem) -> bool:
        if self.resample == "every_step":
            return True
        return ess(ps) < self.resample[1] * ps.size


def _move(ps, tp, driver, cfg, n, rng):
    gamma = cfg.gamma(n)
    if n > 1 and cfg.should_resample(ps):
        ps = multinomial_resample(ps, rng)
    lam_n = driver.advance(ps, ps.t, gamma)
    moved = tula_step(ps, tp, lam_n, gamma, rng)
    return ps, moved, lam_n, gamma


def smc_twfr_step(ps: ParticleSystem, tp: TargetPair, cfg: SamplerConfig, n: int, rng, driver=None) -> tuple[ParticleSystem, float]:
    """One iteration of SMC-T-WFR; returns the new system and ``lambda_n``."""
    if n < 1:
        raise ValueError("iterations start at n = 1")
    driver = driver or _ScheduleDriver(cfg.schedule, tp)
    t_prev = ps.t
    prev, moved, lam_n, gamma = _move(ps, tp, driver, cfg, n, rng)
    kappa = driver.kappa(t_prev, gamma, lam_n)
    # incoming weights are uniform after resampling; otherwise they carry over
    with np.errstate(divide="ignore"):
        logw = np.log(prev.weights)
    if kappa > 0.0:
        log_num = np.asarray(tp.log_pi(moved.positions), dtype=float).reshape(-1)
        log_den = proposal_mixture_logpdf(moved.positions, prev, tp, lam_n, gamma)
        logw = logw + kappa * (log_num - log_den)
    out = ParticleSystem(moved.positions, normalise_log_weights(logw, n), n, t_prev + gamma)
    return out, lam_n


def tempering_smc_step(ps: ParticleSystem, tp: TargetPair, cfg: SamplerConfig, n: int, rng, driver=None, lam_prev: float | None = None) -> tuple[ParticleSystem, float]:
    """One iteration of tempering SMC with weights ``(pi/mu0)^(lambda_n - lambda_{n-1})``."""
    if n < 1:
        raise ValueError("iterations start at n = 1")
    driver = driver or _ScheduleDriver(cfg.schedule, tp)
    t_prev = ps.t
    if lam_prev is None:
        lam_prev = driver.initial() if n == 1 else float(driver.fixed(t_prev))
    prev, moved, lam_n, gamma = _move(ps, tp, driver, cfg, n, rng)
    dlam = lam_n - lam_prev
    if dlam < -1e-15:
        raise ValueError(f"schedule decreased at iteration {n}: {lam_prev} -> {lam_n}")
    with np.errstate(divide="ignore"):
        logw = np.log(prev.weights)
    if dlam > 0.0:
        x = moved.positions
        ratio = np.asarray(tp.log_pi(x), dtype=float).reshape(-1) - np.asarray(tp.log_mu0(x), dtype=float).reshape(-1)
        logw = logw + dlam * ratio
    out = ParticleSystem(moved.positions, normalise_log_weights(logw, n), n, t_prev + gamma)
    return out, lam_n


@dataclass
class SamplerRun:
    algorithm: str
    snapshots: list = field(default_factory=list)
    ts: np.ndarray = None
    lambdas: np.ndarray = None
    ess: np.ndarray = None
    final: ParticleSystem = None
    stopped_at: int | None = None

    @property
    def relative_ess(self) -> np.ndarray:
        return self.ess / self.final.size


def run_sampler(
    algorithm: str,
    tp: TargetPair,
    cfg: SamplerConfig,
    monitor: Callable[[ParticleSystem, int], bool | None] | None = None,
) -> SamplerRun:
    """Run ``cfg.T`` iterations from ``N`` draws of ``mu0``.

    Records ``(t_n, lambda_n, ESS_n)`` for ``n = 0..T``; snapshots are kept at
    ``n = 0``, every ``snapshot_every`` iterations and at the end.
    ``monitor(ps, n)`` is called after every iteration (and at ``n = 0``);
    returning ``True`` stops the run early.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    driver = _ScheduleDriver(cfg.schedule, tp)
    ps = ParticleSystem.uniform(tp.sample_mu0(iteration_rng(cfg.seed, 0), cfg.N))
    run = SamplerRun(algorithm, snapshots=[ps])
    ts, lams, esss = [0.0], [driver.initial()], [ess(ps)]
    if monitor is not None and monitor(ps, 0):
        run.stopped_at = 0
    else:
        for n in range(1, cfg.T + 1):
            rng = iteration_rng(cfg.seed, n)
            try:
                if algorithm == "smc_twfr":
                    ps, lam = smc_twfr_step(ps, tp, cfg, n, rng, driver)
                elif algorithm == "tempering_smc":
                    ps, lam = tempering_smc_step(ps, tp, cfg, n, rng, driver, lams[-1])
                else:
                    t_prev = ps.t
                    gamma = cfg.gamma(n)
                    lam = driver.advance(ps, t_prev, gamma)
                    ps = tula_step(ps, tp, lam, gamma, rng)
                    ps.n, ps.t = n, t_prev + gamma
            except SamplerDivergenceError as exc:
                exc.n = n
                raise SamplerDivergenceError(f"iteration {n}: {exc}", exc.particle, n) from exc
            ts.append(ps.t)
            lams.append(lam)
            esss.append(ess(ps))
            if cfg.snapshot_every and n % cfg.snapshot_every == 0:
                run.snapshots.append(ps)
            if monitor is not None and monitor(ps, n):
                run.stopped_at = n
                break
        if run.snapshots[-1] is not ps:
            run.snapshots.append(ps)
    run.ts, run.lambdas, run.ess, run.final = np.array(ts), np.array(lams), np.array(esss), ps
    return run
