"""One-dimensional closed-form solutions of the Gaussian moment equations.

These are reference solutions only.  They share no code with the RK4 path in
:mod:`tempflow.gaussian_flows`; time integrals of the schedule are evaluated
analytically where the schedule provides them and by adaptive quadrature
otherwise.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad


def _lam_integral(schedule, t: float) -> float:
    """``int_0^t lambda_s ds``."""
    integral = getattr(schedule, "integral", None)
    if integral is not None:
        return float(integral(t))
    return quad(schedule, 0.0, t, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def beta_quad(schedule, t: float) -> float:
    """``int_0^t e^{s-t} lambda_s ds``, analytic when the schedule offers it."""
    if t == 0.0:
        return 0.0
    exact = getattr(schedule, "beta_exact", None)
    if exact is not None:
        return float(exact(t))
    return quad(lambda s: np.exp(s - t) * schedule(s), 0.0, t, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def w_1d(t, m0, s0, mp, sp):
    """Untempered W flow (Ornstein-Uhlenbeck) in 1D; returns ``(m_t, Sigma_t)``."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-t / sp)
    mean = e * m0 + (1.0 - e) * mp
    var = np.exp(-2.0 * t / sp) * (s0 + sp * (np.exp(2.0 * t / sp) - 1.0))
    return mean, var


def fr_1d(t, m0, s0, mp, sp):
    """Untempered FR flow in 1D."""
    t = np.asarray(t, dtype=float)
    prec = 1.0 / sp + np.exp(-t) * (1.0 / s0 - 1.0 / sp)
    var = 1.0 / prec
    mean = mp + np.exp(-t) * var / s0 * (m0 - mp)
    return mean, var


def tempered_w_1d(t: float, schedule, m0, s0, mp, sp):
    """Tempered W flow in 1D via the integrating-factor solution."""

    def phi(u):
        lam_int = _lam_integral(schedule, u)
        return (u - lam_int) / s0 + lam_int / sp

    phi_t = phi(t)
    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=400)

    def drive(u):
        lam = schedule(u)
        return (1.0 - lam) * m0 / s0 + lam * mp / sp

    mean = m0 * np.exp(-phi_t) + quad(lambda u: drive(u) * np.exp(phi(u) - phi_t), 0.0, t, **opts)[0]
    var = s0 * np.exp(-2.0 * phi_t) + 2.0 * quad(lambda u: np.exp(2.0 * (phi(u) - phi_t)), 0.0, t, **opts)[0]
    return mean, var


def tempered_fr_1d(t: float, schedule, m0, s0, mp, sp):
    """Tempered FR flow in 1D, mean attracted to ``m_pi``."""
    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=400)

    def var_at(s):
        b = beta_quad(schedule, s)
        return 1.0 / (1.0 / s0 + b * (1.0 / sp - 1.0 / s0))

    def rate(s):
        lam = schedule(s)
        return var_at(s) * (lam / sp + (1.0 - lam) / s0)

    mean = mp + np.exp(-quad(rate, 0.0, t, **opts)[0]) * (m0 - mp)
    return mean, var_at(t)


def tempered_fr_interpolant_1d(t: float, schedule, m0, s0, mp, sp):
    """Exact tempered FR solution ``rho_{beta_t}`` in 1D."""
    b = beta_quad(schedule, t)
    prec = (1.0 - b) / s0 + b / sp
    mean = ((1.0 - b) * m0 / s0 + b * mp / sp) / prec
    return mean, 1.0 / prec


def kl_1d(m, v, mp, sp):
    """``KL(N(m, v) || N(mp, sp))``, vectorised."""
    return 0.5 * (v / sp + (m - mp) ** 2 / sp - 1.0 + np.log(sp / v))
