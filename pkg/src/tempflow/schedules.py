"""Tempering schedules.

Fixed schedules have closed forms.  Adaptive schedules are driven by an ODE
in ``lambda`` whose right-hand side involves ``Var_{pi_lambda}(log mu0/pi)``
(closed form for Gaussian pairs, or a particle estimate).  Also here: the
companion integral ``beta_t = int_0^t e^{s-t} lambda_s ds`` and the discrete
mirror-descent exponents ``alpha_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.special import expi

from tempflow.models import TargetPair, log_ratio_variance
from tempflow.ode import rk4_step, time_grid

FIXED_KINDS = ("constant", "linear", "exponential", "chehab")
ADAPTIVE_VARIANTS = ("grad_flow", "constant_kl", "ess")


class ScheduleComplete(Exception):
    """``lambda`` has reached 1 (or the variance vanished); freeze it at 1."""


class ScheduleIntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class FixedSchedule:
    """A closed-form schedule ``lambda_t``.

    ``constant`` takes ``value`` (default 1), ``linear`` a horizon ``T`` after
    which it stays at 1, ``exponential`` a ``rate`` and ``chehab`` nothing.
    """

    kind: str
    T: float | None = None
    rate: float | None = None
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in FIXED_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {FIXED_KINDS}")
        if self.kind == "linear" and (self.T is None or self.T <= 0):
            raise ValueError("linear schedule needs a horizon T > 0")
        if self.kind == "exponential" and (self.rate is None or self.rate <= 0):
            raise ValueError("exponential schedule needs a rate > 0")
        if self.kind == "constant" and not 0.0 <= self.value <= 1.0:
            raise ValueError("constant schedule value must lie in [0, 1]")

    @classmethod
    def constant(cls, value: float = 1.0) -> FixedSchedule:
        return cls("constant", value=value)

    @classmethod
    def linear(cls, T: float) -> FixedSchedule:
        return cls("linear", T=T)

    @classmethod
    def exponential(cls, rate: float) -> FixedSchedule:
        return cls("exponential", rate=rate)

    @classmethod
    def chehab(cls) -> FixedSchedule:
        return cls("chehab")

    def __call__(self, t):
        return eval_fixed(self, t)

    def integral(self, t: float) -> float:
        """``int_0^t lambda_s ds``."""
        if self.kind == "constant":
            return self.value * t
        if self.kind == "linear":
            T = self.T
            return t * t / (2.0 * T) if t <= T else T / 2.0 + (t - T)
        if self.kind == "exponential":
            a = self.rate
            return t + math.expm1(-a * t) / a
        return t - math.log1p(t / 2.0)

    def beta_exact(self, t: float) -> float:
        """``int_0^t e^{s-t} lambda_s ds`` in closed form."""
        decay = -math.expm1(-t)  # 1 - e^{-t}
        if self.kind == "constant":
            return self.value * decay
        if self.kind == "linear":
            T = self.T
            if t <= T:
                return (t - 1.0 + math.exp(-t)) / T
            bT = (T - 1.0 + math.exp(-T)) / T
            r = math.exp(-(t - T))
            return r * bT + (1.0 - r)
        if self.kind == "exponential":
            a = self.rate
            if abs(a - 1.0) < 1e-12:
                return decay - t * math.exp(-t)
            return decay - (math.exp(-a * t) - math.exp(-t)) / (1.0 - a)
        # chehab: int_0^t e^{s-t}/(2+s) ds = e^{-(t+2)} (Ei(2+t) - Ei(2))
        return decay - math.exp(-(t + 2.0)) * (expi(2.0 + t) - expi(2.0))


def eval_fixed(s: FixedSchedule, t):
    """``lambda_t`` for a fixed schedule; accepts scalars or arrays."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("schedule time must be non-negative")
    if s.kind == "constant":
        out = np.full_like(arr, s.value)
    elif s.kind == "linear":
        out = np.minimum(arr / s.T, 1.0)
    elif s.kind == "exponential":
        out = -np.expm1(-s.rate * arr)
    else:
        out = 1.0 - 1.0 / (2.0 + arr)
    return float(out) if out.ndim == 0 else out


def beta_of_t(schedule: Callable[[float], float], t_end: float, dt: float = 1e-3) -> float:
    """RK4 solution at ``t_end`` of ``beta' = lambda_t - beta``, ``beta_0 = 0``."""
    ts, ys = beta_path(schedule, t_end, dt)
    return float(ys[-1])


def beta_value(schedule: Callable[[float], float], t: float) -> float:
    """``beta_t``: closed form when the schedule provides one, else adaptive quadrature."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    exact = getattr(schedule, "beta_exact", None)
    if exact is not None:
        return float(exact(t))
    if t == 0.0:
        return 0.0
    return quad(lambda s: math.exp(s - t) * float(schedule(s)), 0.0, t, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def beta_path(schedule: Callable[[float], float], t_end: float, dt: float = 1e-3):
    ts = time_grid(t_end, dt)
    ys = np.empty(len(ts))
    ys[0] = 0.0
    b = 0.0
    f = lambda t, y: float(schedule(t)) - y  # noqa: E731
    for i in range(1, len(ts)):
        b = rk4_step(f, ts[i - 1], b, ts[i] - ts[i - 1])
        ys[i] = b
    return ts, ys


# -- adaptive schedules -------------------------------------------------------


def adaptive_rhs(variant: str, lam: float, variance: float, beta_param: float = 1.0, mean_gap: float = 0.0) -> float:
    """Shared right-hand side of the adaptive schedules.

    ``variance`` is ``Var(log mu0/pi)`` under ``pi_lambda`` or its particle
    proxy.  ``mean_gap`` is ``E_mu[log pi/mu0] - E_{pi_lambda}[log pi/mu0]``
    and only enters the ``grad_flow`` variant; it is zero when ``mu_t`` is
    taken as a proxy for ``pi_lambda``.
    """
    if variant == "grad_flow":
        return mean_gap + (1.0 - lam) * variance
    if lam >= 1.0 or variance <= 0.0:
        raise ScheduleComplete
    if variant == "constant_kl":
        return beta_param / ((1.0 - lam) * variance)
    if variant == "ess":
        return math.sqrt(beta_param / variance)
    raise ValueError(f"unknown adaptive variant {variant!r}")


def gradflow_rhs(lam: float, mu_mean_logratio: float, tp: TargetPair) -> float:
    """Steepest-descent schedule ODE.

    ``mu_mean_logratio`` is ``E_{mu_t}[log pi/mu0]`` with normalised
    densities, supplied by the caller (closed form or particle average).
    """
    lr = tp.log_ratio
    interp_mean = -lr.mean_at(lam)
    return adaptive_rhs("grad_flow", lam, lr.variance_at(lam), mean_gap=mu_mean_logratio - interp_mean)


def constant_kl_rhs(lam: float, tp: TargetPair, beta_param: float = 1.0) -> float:
    if lam >= 1.0:
        raise ScheduleComplete
    return adaptive_rhs("constant_kl", lam, log_ratio_variance(tp, lam), beta_param)


def ess_rhs(lam: float, tp: TargetPair, beta_param: float = 1.0) -> float:
    if lam >= 1.0:
        raise ScheduleComplete
    return adaptive_rhs("ess", lam, log_ratio_variance(tp, lam), beta_param)


def gradflow_closed_form_meanshift(m: float, t):
    """Steepest-descent schedule for ``mu0 = N(0,1)``, ``pi = N(m,1)``.

    Solves ``lambda' = m^2 (1 - beta)``, ``beta' = lambda - beta`` from zero.
    At ``m^2 = 1/4`` the characteristic roots coincide and the solution is
    ``1 - (1 + t/4) e^{-t/2}``.
    """
    m2 = m * m
    t = np.asarray(t, dtype=float)
    disc = 1.0 - 4.0 * m2
    if disc < -1e-14:
        raise ValueError(f"m^2 = {m2:g} > 1/4: complex roots, integrate the ODE numerically")
    if abs(disc) <= 1e-14:
        out = 1.0 - (1.0 + t / 4.0) * np.exp(-t / 2.0)
    else:
        sq = math.sqrt(disc)
        r1 = 0.5 * (-1.0 + sq)
        r2 = 0.5 * (-1.0 - sq)
        out = 1.0 - (m2 + r2) / (r2 - r1) * np.exp(r1 * t) - (m2 + r1) / (r1 - r2) * np.exp(r2 * t)
    return float(out) if out.ndim == 0 else out


@dataclass
class AdaptiveScheduleState:
    variant: str
    lam: float = 0.0
    t: float = 0.0
    beta_param: float = 1.0
    frozen: bool = False

    def __post_init__(self):
        if self.variant not in ADAPTIVE_VARIANTS:
            raise ValueError(f"unknown adaptive variant {self.variant!r}")
        if self.beta_param <= 0:
            raise ValueError("beta_param must be positive")
        self.lam = float(min(max(self.lam, 0.0), 1.0))
        if self.lam >= 1.0:
            self.frozen = True


def _check_monotone(old: float, new: float, t: float, variant: str) -> None:
    if new < old - 1e-12:
        raise ScheduleIntegrationError(
            f"{variant}: lambda decreased from {old:.12g} to {new:.12g} at t={t:.6g}", t
        )


def step_adaptive(state: AdaptiveScheduleState, h: float, variance_fn: Callable[[float], float], mean_gap_fn=None) -> None:
    """Advance ``state`` by one RK4 step of length ``h``.

    ``variance_fn(lam)`` gives the log-ratio variance at ``lam``; pass a
    constant function to use a frozen particle estimate over the step.
    ``lambda`` is clamped to ``[0, 1]`` and frozen once it reaches 1.
    """
    if state.frozen:
        state.t += h
        return
    gap = mean_gap_fn or (lambda lam: 0.0)

    def f(t, lam):
        lam = min(max(lam, 0.0), 1.0)
        val = adaptive_rhs(state.variant, lam, variance_fn(lam), state.beta_param, gap(lam))
        if not math.isfinite(val):
            raise ScheduleIntegrationError(f"{state.variant}: non-finite rhs at t={t:.6g}", t)
        return val

    try:
        new = rk4_step(f, state.t, state.lam, h)
    except ScheduleComplete:
        new = 1.0
    if not math.isfinite(new):
        raise ScheduleIntegrationError(f"{state.variant}: non-finite lambda at t={state.t:.6g}", state.t)
    new = min(max(new, 0.0), 1.0)
    _check_monotone(state.lam, new, state.t, state.variant)
    state.lam = new
    state.t += h
    if new >= 1.0:
        state.frozen = True


def _coupled_gradflow(state: AdaptiveScheduleState, tp: TargetPair, coupled_flow, t_end: float, dt: float):
    """Integrate ``lambda`` jointly with a Gaussian flow supplying ``E_mu[log pi/mu0]``."""
    from tempflow.gaussian_flows import FlowKind, rhs_combined

    mu0, _ = tp.require_gaussian("grad_flow schedule")
    lr = tp.log_ratio
    d = mu0.dim

    def dlam(lam, mu_mean):
        interp_mean = -lr.mean_at(lam)
        return adaptive_rhs("grad_flow", lam, lr.variance_at(lam), mean_gap=mu_mean - interp_mean)

    if coupled_flow == "beta":
        # exact tempered FR solution: mu_t = rho_{beta_t}

        def f(t, y):
            lam = min(max(y[0], 0.0), 1.0)
            beta = min(max(y[1], 0.0), 1.0)
            return np.array([dlam(lam, -lr.mean_at(beta)), lam - beta])

        y = np.array([state.lam, 0.0])
    elif isinstance(coupled_flow, FlowKind):
        kind = FlowKind(coupled_flow.base, tempered=True, schedule=lambda t: 0.0, fr_attractor=coupled_flow.fr_attractor)

        def f(t, y):
            lam = min(max(y[0], 0.0), 1.0)
            mean = y[1 : 1 + d]
            cov = y[1 + d :].reshape(d, d)
            dm, dc = rhs_combined(mean, cov, tp, lam, kind)
            return np.concatenate([[dlam(lam, -lr.mean(mean, cov))], dm, dc.ravel()])

        y = np.concatenate([[state.lam], mu0.mean, np.asarray(mu0.cov).ravel()])
    else:
        raise ValueError(f"unsupported coupled_flow {coupled_flow!r}")

    ts = time_grid(t_end, dt)
    lams = np.empty(len(ts))
    lams[0] = state.lam
    for i in range(1, len(ts)):
        t0 = float(ts[i - 1])
        new = rk4_step(f, t0, y, float(ts[i]) - t0)
        if not np.all(np.isfinite(new)):
            raise ScheduleIntegrationError(f"grad_flow: non-finite state at t={t0:.6g}", t0)
        new[0] = min(max(new[0], 0.0), 1.0)
        _check_monotone(y[0], new[0], t0, "grad_flow")
        y = new
        lams[i] = y[0]
    t_start = state.t
    state.lam = float(y[0])
    state.t += float(ts[-1])
    state.frozen = state.lam >= 1.0
    return ts + t_start, lams


def integrate_schedule(
    state: AdaptiveScheduleState,
    tp: TargetPair,
    t_end: float,
    dt: float = 1e-3,
    coupled_flow="beta",
):
    """RK4 trajectory ``(ts, lambdas)`` of an adaptive schedule with closed-form variances.

    ``grad_flow`` needs ``E_{mu_t}[log pi/mu0]`` and is integrated jointly with
    ``coupled_flow``: ``"beta"`` for the exact tempered FR solution, or a
    :class:`~tempflow.gaussian_flows.FlowKind` whose moment equations are
    integrated alongside.  The other variants depend on ``lambda`` only.
    ``state`` is advanced in place.
    """
    lr = tp.log_ratio
    if not state.frozen and not np.any(lr.a) and not np.any(lr.b):
        # mu0 == pi: the log ratio is constant, nothing left to temper
        state.lam, state.frozen = 1.0, True
    if state.variant == "grad_flow" and not state.frozen:
        return _coupled_gradflow(state, tp, coupled_flow, t_end, dt)
    variance = lr.variance_at
    ts = time_grid(t_end, dt)
    t_start = state.t
    lams = np.empty(len(ts))
    lams[0] = state.lam
    for i in range(1, len(ts)):
        step_adaptive(state, float(ts[i] - ts[i - 1]), variance)
        lams[i] = state.lam
    return ts + t_start, lams


# -- discrete mirror-descent exponents ----------------------------------------


def _validate_discrete(gammas, lambdas):
    g = np.asarray(gammas, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if g.ndim != 1 or lam.ndim != 1:
        raise ValueError("gammas and lambdas must be one-dimensional")
    if len(lam) < len(g):
        raise ValueError(f"need at least {len(g)} lambdas (lambda_0..lambda_{len(g) - 1}), got {len(lam)}")
    if np.any((g < 0) | (g > 1)):
        raise ValueError("step sizes gamma_k must lie in [0, 1]")
    if np.any((lam < 0) | (lam > 1)):
        raise ValueError("lambda_k must lie in [0, 1]")
    return g, lam


def discrete_alpha(gammas, lambdas) -> np.ndarray:
    """``alpha_1..alpha_n`` from ``alpha_n = (1-gamma_n) alpha_{n-1} + gamma_n lambda_{n-1}``.

    ``lambdas[k]`` is ``lambda_k``; only ``lambda_0..lambda_{n-1}`` are used.
    """
    g, lam = _validate_discrete(gammas, lambdas)
    out = np.empty(len(g))
    a = 0.0
    for k in range(len(g)):
        a = (1.0 - g[k]) * a + g[k] * lam[k]
        out[k] = a
    return out


def alpha_tilde(gammas) -> np.ndarray:
    """Untempered exponents ``1 - prod_{k<=n} (1 - gamma_k)``."""
    g = np.asarray(gammas, dtype=float)
    return 1.0 - np.cumprod(1.0 - g)
