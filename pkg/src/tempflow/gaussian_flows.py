"""Exact Gaussian dynamics for the W, FR and WFR flows and their tempered versions.

When both ``mu0`` and ``pi`` are Gaussian every flow keeps ``mu_t`` Gaussian,
so each PDE reduces to an ODE for ``(m_t, Sigma_t)``.  The right-hand sides
below act on full ``d x d`` covariances; the one-dimensional closed forms in
:mod:`tempflow.closed_forms` are kept apart and only serve as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from tempflow.models import GaussianDist, TargetPair, interpolated_precision, kl_gaussian
from tempflow.ode import time_grid
from tempflow.schedules import FixedSchedule, eval_fixed

Schedule = Callable[[float], float]

BASES = ("W", "FR", "WFR")
FR_ATTRACTORS = ("target", "interpolant")


class FlowIntegrationError(RuntimeError):
    """The covariance lost positive definiteness and step halving did not help."""

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class FlowKind:
    """Which flow to integrate.

    ``fr_attractor`` selects the mean attractor of the tempered FR part:
    ``"target"`` relaxes the mean towards ``m_pi`` whatever ``lambda`` is,
    ``"interpolant"`` uses the mean of ``pi_lambda``, which reproduces the
    exact solution ``rho_{beta_t}`` of the tempered FR PDE.
    """

    base: str
    tempered: bool = False
    schedule: Schedule | None = field(default=None, compare=False)
    fr_attractor: str = "target"

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown flow base {self.base!r}; expected one of {BASES}")
        if self.tempered and self.schedule is None:
            raise ValueError("a tempered flow needs a schedule")
        if self.fr_attractor not in FR_ATTRACTORS:
            raise ValueError(f"fr_attractor must be one of {FR_ATTRACTORS}")

    @property
    def name(self) -> str:
        return ("T-" if self.tempered else "") + self.base

    def lam(self, t: float) -> float:
        return float(self.schedule(t)) if self.tempered else 1.0


@dataclass(frozen=True)
class MomentState:
    t: float
    mean: np.ndarray
    cov: np.ndarray

    def as_gaussian(self) -> GaussianDist:
        return GaussianDist(self.mean, self.cov)


@dataclass
class MomentTrajectory:
    kind: FlowKind
    ts: np.ndarray
    means: np.ndarray  # (n, d)
    covs: np.ndarray  # (n, d, d)

    def __len__(self) -> int:
        return len(self.ts)

    def state(self, i: int) -> MomentState:
        return MomentState(float(self.ts[i]), self.means[i], self.covs[i])

    @property
    def states(self) -> list[MomentState]:
        return [self.state(i) for i in range(len(self))]


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def rhs_w(mean: np.ndarray, cov: np.ndarray, pi: GaussianDist):
    """Wasserstein (Langevin / OU) moment equations."""
    prec = pi.precision
    dmean = -prec @ (mean - pi.mean)
    x = prec @ cov
    dcov = -(x + x.T) + 2.0 * np.eye(len(mean))
    return dmean, dcov


def rhs_fr(mean: np.ndarray, cov: np.ndarray, pi: GaussianDist):
    """Fisher-Rao moment equations."""
    prec = pi.precision
    dmean = -cov @ prec @ (mean - pi.mean)
    dcov = _sym(-cov @ prec @ cov) + cov
    return dmean, dcov


def _natural_shift(mu0: GaussianDist, pi: GaussianDist, lam: float) -> np.ndarray:
    return (1.0 - lam) * mu0.precision @ mu0.mean + lam * pi.precision @ pi.mean


def rhs_tempered_w(mean: np.ndarray, cov: np.ndarray, tp: TargetPair, lam: float):
    """Tempered W moment equations: W flow towards ``pi_lambda``."""
    mu0, pi = tp.require_gaussian("rhs_tempered_w")
    if lam == 1.0:
        return rhs_w(mean, cov, pi)
    prec = interpolated_precision(mu0, pi, lam)
    # -P (m - a) with a = P^{-1} h, the mean of pi_lambda
    dmean = _natural_shift(mu0, pi, lam) - prec @ mean
    x = prec @ cov
    dcov = -(x + x.T) + 2.0 * np.eye(len(mean))
    return dmean, dcov


def rhs_tempered_fr(
    mean: np.ndarray,
    cov: np.ndarray,
    tp: TargetPair,
    lam: float,
    attractor: str = "target",
):
    """Tempered FR moment equations.

    With ``attractor="target"`` the mean is pulled towards ``m_pi`` at every
    ``lambda``; ``"interpolant"`` pulls it towards the mean of ``pi_lambda``.
    """
    mu0, pi = tp.require_gaussian("rhs_tempered_fr")
    if lam == 1.0:
        return rhs_fr(mean, cov, pi)
    prec = interpolated_precision(mu0, pi, lam)
    if attractor == "target":
        dmean = -cov @ prec @ (mean - pi.mean)
    elif attractor == "interpolant":
        dmean = cov @ (_natural_shift(mu0, pi, lam) - prec @ mean)
    else:
        raise ValueError(f"unknown attractor {attractor!r}")
    dcov = _sym(-cov @ prec @ cov) + cov
    return dmean, dcov


def rhs_combined(mean: np.ndarray, cov: np.ndarray, tp: TargetPair, lam: float, kind: FlowKind):
    """Right-hand side for ``kind``; WFR is the sum of the W and FR parts."""
    _, pi = tp.require_gaussian("rhs_combined")
    tempered = kind.tempered
    if kind.base == "W":
        return rhs_tempered_w(mean, cov, tp, lam) if tempered else rhs_w(mean, cov, pi)
    fr = rhs_tempered_fr(mean, cov, tp, lam, kind.fr_attractor) if tempered else rhs_fr(mean, cov, pi)
    if kind.base == "FR":
        return fr
    w = rhs_tempered_w(mean, cov, tp, lam) if tempered else rhs_w(mean, cov, pi)
    return w[0] + fr[0], w[1] + fr[1]


def _is_pd(cov: np.ndarray) -> bool:
    if cov.shape == (1, 1):
        c = cov[0, 0]
        return bool(np.isfinite(c) and c > 0.0)
    return bool(np.all(np.isfinite(cov))) and np.linalg.eigvalsh(_sym(cov))[0] > 0.0


def _rk4_moments(kind: FlowKind, tp: TargetPair, t: float, mean, cov, h: float, lams=None):
    """One RK4 step; ``lams`` optionally holds the schedule at ``t``, ``t + h/2``, ``t + h``."""
    if lams is None:
        lams = (kind.lam(t), kind.lam(t + 0.5 * h), kind.lam(t + h))
    l0, lh, l1 = lams

    def f(lam, m, c):
        return rhs_combined(m, c, tp, lam, kind)

    k1m, k1c = f(l0, mean, cov)
    k2m, k2c = f(lh, mean + 0.5 * h * k1m, cov + 0.5 * h * k1c)
    k3m, k3c = f(lh, mean + 0.5 * h * k2m, cov + 0.5 * h * k2c)
    k4m, k4c = f(l1, mean + h * k3m, cov + h * k3c)
    new_mean = mean + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
    new_cov = cov + (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
    return new_mean, _sym(new_cov)


def _scalar_rhs(kind: FlowKind, consts, lam: float, m: float, c: float):
    """Same moment equations as :func:`rhs_combined` for ``d = 1`` on plain floats."""
    m0, p0, mp, pp = consts
    tempered = kind.tempered and lam != 1.0
    if tempered:
        prec = lam * pp + (1.0 - lam) * p0
        shift = (1.0 - lam) * p0 * m0 + lam * pp * mp
    else:
        prec, shift = pp, pp * mp
    dm = dc = 0.0
    if kind.base in ("W", "WFR"):
        dm += shift - prec * m
        dc += 2.0 - 2.0 * prec * c
    if kind.base in ("FR", "WFR"):
        if tempered and kind.fr_attractor == "interpolant":
            dm += c * (shift - prec * m)
        else:
            dm -= c * prec * (m - mp)
        dc += c - c * prec * c
    return dm, dc


def _rk4_scalar(kind, consts, m, c, h, lams):
    l0, lh, l1 = lams
    k1m, k1c = _scalar_rhs(kind, consts, l0, m, c)
    k2m, k2c = _scalar_rhs(kind, consts, lh, m + 0.5 * h * k1m, c + 0.5 * h * k1c)
    k3m, k3c = _scalar_rhs(kind, consts, lh, m + 0.5 * h * k2m, c + 0.5 * h * k2c)
    k4m, k4c = _scalar_rhs(kind, consts, l1, m + h * k3m, c + h * k3c)
    return m + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m), c + (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)


MAX_HALVINGS = 10


def _advance(kind, tp, t, mean, cov, h, depth=0, lams=None):
    if lams is not None and mean.shape == (1,):
        mu0, pi = tp.require_gaussian("integrate_flow")
        consts = (mu0.mean[0], mu0.precision[0, 0], pi.mean[0], pi.precision[0, 0])
        m, c = _rk4_scalar(kind, consts, mean[0], cov[0, 0], h, lams)
        new_mean, new_cov = np.array([m]), np.array([[c]])
    else:
        new_mean, new_cov = _rk4_moments(kind, tp, t, mean, cov, h, lams)
    if _is_pd(new_cov):
        return new_mean, new_cov
    if depth >= MAX_HALVINGS:
        raise FlowIntegrationError(
            f"{kind.name}: covariance lost positive definiteness at t={t:.6g} "
            f"even with step {h:.3g}; reduce dt",
            t,
        )
    half = 0.5 * h
    m1, c1 = _advance(kind, tp, t, mean, cov, half, depth + 1)
    return _advance(kind, tp, t + half, m1, c1, half, depth + 1)


def integrate_flow(
    kind: FlowKind,
    tp: TargetPair,
    t_end: float,
    dt: float = 1e-3,
    record_every: int = 1,
) -> MomentTrajectory:
    """RK4 integration of the moment equations from ``(m_0, Sigma_0)``.

    A step that would leave the covariance non-PD is retried with the step
    halved, up to ten times, before :class:`FlowIntegrationError` is raised.
    """
    mu0, _ = tp.require_gaussian("integrate_flow")
    ts = time_grid(t_end, dt)
    mean = mu0.mean.astype(float)
    cov = np.array(mu0.cov, dtype=float)
    rec_t, rec_m, rec_c = [0.0], [mean.copy()], [cov.copy()]
    lam_nodes = lam_mid = None
    if kind.tempered and isinstance(kind.schedule, FixedSchedule):
        # evaluate the schedule once on the whole grid
        lam_nodes = np.asarray(eval_fixed(kind.schedule, ts), dtype=float).tolist()
        lam_mid = np.asarray(eval_fixed(kind.schedule, 0.5 * (ts[:-1] + ts[1:])), dtype=float).tolist()
    elif not kind.tempered:
        lam_nodes = [1.0] * len(ts)
        lam_mid = lam_nodes
    for i, (t0, t1) in enumerate(zip(ts[:-1], ts[1:]), start=1):
        lams = None if lam_nodes is None else (lam_nodes[i - 1], lam_mid[i - 1], lam_nodes[i])
        mean, cov = _advance(kind, tp, float(t0), mean, cov, float(t1 - t0), lams=lams)
        if i % record_every == 0 or i == len(ts) - 1:
            rec_t.append(float(t1))
            rec_m.append(mean.copy())
            rec_c.append(cov.copy())
    return MomentTrajectory(kind, np.array(rec_t), np.array(rec_m), np.array(rec_c))


def kl_along(traj: MomentTrajectory, pi: GaussianDist) -> tuple[np.ndarray, np.ndarray]:
    """``(ts, KL(mu_t || pi))`` along a trajectory."""
    if pi.dim == 1:
        # same formula as kl_gaussian, vectorised over the trajectory
        x = traj.covs[:, 0, 0] / pi.cov[0, 0] - 1.0
        diff = pi.mean[0] - traj.means[:, 0]
        kl = 0.5 * ((x - np.log1p(x)) + diff * pi.precision[0, 0] * diff)
        return traj.ts.copy(), np.maximum(kl, 0.0)
    kl = np.array([kl_gaussian(GaussianDist(m, c), pi) for m, c in zip(traj.means, traj.covs)])
    return traj.ts.copy(), kl
