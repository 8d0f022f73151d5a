"""Right-hand sides of the KL convergence bounds and the exact FR gap.

Regularity constants follow the strong-convexity / smoothness assumptions:
``c`` and ``L`` bound the Hessian of ``V = -log density`` from below and
above, and the dissipativity pair ``<x, grad V(x)> >= a|x|^2 - b`` is built
from them with Young's inequality at a tunable ``eps > 1/(2c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, simpson

from tempflow.models import GaussianDist, TargetPair, _log_ratio_coeffs
from tempflow.schedules import beta_value

SIMPSON_NODES = 2001


class BoundDomainError(ValueError):
    """The bound is undefined for the supplied inputs."""


@dataclass(frozen=True)
class RegularityConstants:
    """Constants of one potential: convexity ``c``, smoothness ``L``, dissipativity ``(a, b)``."""

    c: float
    L: float
    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.c <= self.L * (1 + 1e-12):
            raise ValueError(f"need 0 < c <= L, got c={self.c}, L={self.L}")
        if self.a <= 0 or self.b < 0:
            raise ValueError(f"need a > 0 and b >= 0, got a={self.a}, b={self.b}")


def constants_for_gaussian(g: GaussianDist, eps: float | None = None) -> RegularityConstants:
    """Constants of ``V = -log N(mean, cov)``.

    ``c``, ``L`` are the extreme eigenvalues of the precision.  With Young's
    inequality at ``eps`` (default ``1/c``): ``a = c - 1/(2 eps)`` and
    ``b = eps |grad V(0)|^2 / 2``.
    """
    eig = np.linalg.eigvalsh(g.precision)
    c, L = float(eig[0]), float(eig[-1])
    eps = 1.0 / c if eps is None else eps
    if eps <= 1.0 / (2.0 * c):
        raise ValueError(f"eps must exceed 1/(2c) = {1.0 / (2.0 * c):g}")
    grad0 = -g.precision @ g.mean  # grad V(0)
    return RegularityConstants(c=c, L=L, a=c - 1.0 / (2.0 * eps), b=eps * float(grad0 @ grad0) / 2.0)


def A_constant(pi: RegularityConstants, mu0: RegularityConstants, dim: int, second_moment_mu0: float) -> float:
    """Bias constant of the continuous-time tempered W bound."""
    moment = max(second_moment_mu0, (dim + mu0.b + pi.b) / min(mu0.a, pi.a))
    return dim * (mu0.L - pi.c) + 4.0 * max(pi.L**2, mu0.L**2) * (moment + max(pi.b / pi.a, mu0.b / mu0.a))


def A_prime_constant(pi: RegularityConstants, mu0: RegularityConstants, dim: int, second_moment_mu0: float) -> float:
    """Bias constant of the discrete-time (tempered ULA) bound."""
    moment = max(second_moment_mu0, 2.0 * (1.5 * (mu0.b + pi.b) + dim) / min(mu0.a, pi.a, 1.0))
    return 2.0 * mu0.L * mu0.b / mu0.a + 2.0 * pi.L * pi.b / pi.a + 2.0 * (mu0.L + pi.L) * moment


def prop22_rhs(t: float, schedule, c_pi: float, kl0: float, A: float) -> float:
    """``e^{-2 t c} KL0 + A int_0^t e^{-2(t-s)c} (1 - lambda_s) ds``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    decay = math.exp(-2.0 * t * c_pi) * kl0
    if t == 0.0 or A == 0.0:
        return decay
    bias = quad(
        lambda s: math.exp(-2.0 * (t - s) * c_pi) * (1.0 - float(schedule(s))),
        0.0,
        t,
        epsabs=1e-9,
        epsrel=1e-9,
        limit=400,
    )[0]
    return decay + A * bias


def prop24_rhs(beta_t: float, M: float, B: float) -> float:
    """``M (1 - beta) [2 + B + B exp(M (1 + B)(1 - beta))]``."""
    if not -1e-12 <= beta_t <= 1.0 + 1e-12:
        raise BoundDomainError(f"beta_t must lie in [0, 1], got {beta_t}")
    r = max(1.0 - beta_t, 0.0)
    if r == 0.0:
        return 0.0
    expo = M * (1.0 + B) * r
    if expo > 700.0:
        # exp overflows a double: the bound is vacuous here
        return math.inf
    return M * r * (2.0 + B + B * math.exp(expo))


def fr_envelope_constants(tp: TargetPair) -> tuple[float, float]:
    """``(M, B)`` for a Gaussian pair.

    Writing ``log mu0/pi = x'Ax/2 + b'x + c`` and ``|x| <= (1 + |x|^2)/2``
    gives ``|log mu0/pi| <= M (1 + |x|^2)`` with
    ``M = max(|A|/2 + |b|/2, |b|/2 + |c|)``.  ``B`` is the larger second moment.
    """
    mu0, pi = tp.require_gaussian("fr_envelope_constants")
    a, b, c = _log_ratio_coeffs(mu0, pi)
    na = float(np.linalg.norm(a, 2))
    nb = float(np.linalg.norm(b))
    M = max(0.5 * na + 0.5 * nb, 0.5 * nb + abs(c))
    B = max(mu0.second_moment(), pi.second_moment())
    return M, B


def prop25_gap(t: float, schedule, tp: TargetPair, nodes: int = SIMPSON_NODES) -> float:
    """``-int_{beta_t}^{1 - e^{-t}} (1 - u) Var_{rho_u}(log mu0/pi) du`` by composite Simpson."""
    tp.require_gaussian("prop25_gap")
    beta = beta_value(schedule, t)
    upper = -math.expm1(-t)
    if beta > upper + 1e-12:
        raise BoundDomainError(f"beta_t = {beta} exceeds 1 - e^(-t) = {upper}; schedule leaves [0, 1]")
    if upper - beta <= 0.0:
        return 0.0
    u = np.linspace(beta, upper, nodes)
    val = -float(simpson((1.0 - u) * tp.log_ratio.variance_at(u), x=u))
    return min(val, 0.0)


def prop28_rhs(alphas, kl_pi_mu0: float) -> float:
    """``prod_{k<=n} (1 - alpha_k) / alpha_1 * KL(pi || mu0)`` for ``alphas = (alpha_1..alpha_n)``."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0:
        raise BoundDomainError("need at least one exponent")
    if alphas[0] <= 0.0:
        raise BoundDomainError("alpha_1 = 0: the bound is undefined")
    return float(np.prod(1.0 - alphas) / alphas[0] * kl_pi_mu0)


@dataclass(frozen=True)
class Prop27Result:
    value: float
    step_size_ok: bool
    violations: tuple = ()


def interpolated_constants(lam: float, pi: RegularityConstants, mu0: RegularityConstants) -> tuple[float, float]:
    """``(c_lambda, L_lambda)`` along the tempering path."""
    return (1.0 - lam) * mu0.c + lam * pi.c, (1.0 - lam) * mu0.L + lam * pi.L


def prop27_rhs(n: int, gammas, lambdas, pi: RegularityConstants, mu0: RegularityConstants, dim: int, kl0: float, A_prime: float) -> Prop27Result:
    """Discrete tempered ULA bound after ``n`` steps.

    ``gammas[k]`` and ``lambdas[k]`` are indexed from ``k = 0``; the decay
    uses ``k = 1..n`` and the bias sum runs over ``k = 0..n-1``.  A violated
    step-size condition is reported on the result, not raised.
    """
    gammas = np.asarray(gammas, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return Prop27Result(float(kl0), True)
    if len(gammas) < n + 1 or len(lambdas) < n + 1:
        raise ValueError(f"need gammas and lambdas for k = 0..{n}")
    cs, Ls = interpolated_constants(lambdas[: n + 1], pi, mu0)
    # cum[k] = sum_{i=1}^k gamma_i c_i
    cum = np.concatenate([[0.0], np.cumsum(gammas[1 : n + 1] * cs[1 : n + 1])])
    value = kl0 * math.exp(-cum[n])
    k = np.arange(n)
    value += float(np.sum((6.0 * gammas[k] ** 2 * dim * Ls[k] ** 2 + (1.0 - lambdas[k]) * A_prime) * np.exp(-cum[k])))
    cap = min(1.0, min(pi.a, mu0.a) / (2.0 * (pi.L + mu0.L) ** 2))
    limits = np.minimum(cap, cs / (4.0 * Ls**2))
    bad = tuple(int(i) for i in np.flatnonzero(gammas[: n + 1] > limits))
    return Prop27Result(value, not bad, bad)

