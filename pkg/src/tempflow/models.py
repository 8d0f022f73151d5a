"""Probability-model primitives.

Gaussians, the two-component mixture target, the geometric interpolation
family ``rho_alpha ~ mu0^(1 - alpha) * pi^alpha`` and the closed-form
functionals of these objects used throughout the package.

Log-densities handed to the samplers may be unnormalised.  Anything that
needs a normalised density (KL divergences, interpolants, log-ratio moments)
requires the Gaussian descriptors of a :class:`TargetPair`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import expit

LOG_2PI = np.log(2.0 * np.pi)
PD_TOL = 1e-12


class InvalidModelError(ValueError):
    """Raised for malformed distributions (non-PD covariance, bad shapes)."""


class InvalidInterpolantError(InvalidModelError):
    """The geometric interpolant does not exist (combined precision not PD)."""


def _check_pd(mat: np.ndarray, what: str) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidModelError(f"{what} must be a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InvalidModelError(f"{what} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > 1e-12 * scale:
        raise InvalidModelError(f"{what} is not symmetric")
    eig = np.linalg.eigvalsh(mat)
    if eig[0] <= PD_TOL:
        raise InvalidModelError(
            f"{what} is not positive definite (smallest eigenvalue {eig[0]:.3e})"
        )


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Multivariate normal ``N(mean, cov)``.

    Scalars are accepted for the one-dimensional case, so
    ``GaussianDist(20.0, 0.1)`` is ``N(20, 0.1)`` with 0.1 the variance.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        elif cov.ndim == 1 and mean.shape[0] == 1 and cov.shape[0] == 1:
            cov = cov.reshape(1, 1)
        cov = cov.copy()
        if mean.ndim != 1:
            raise InvalidModelError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise InvalidModelError(
                f"cov shape {cov.shape} does not match mean dimension {mean.shape[0]}"
            )
        if not np.all(np.isfinite(mean)):
            raise InvalidModelError("mean has non-finite entries")
        _check_pd(cov, "covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def precision(self) -> np.ndarray:
        prec = np.linalg.inv(self.cov)
        return 0.5 * (prec + prec.T)

    @cached_property
    def logdet_cov(self) -> float:
        return float(np.linalg.slogdet(self.cov)[1])

    def allclose(self, other: GaussianDist, atol: float = 1e-12) -> bool:
        return (
            self.dim == other.dim
            and np.allclose(self.mean, other.mean, rtol=0.0, atol=atol)
            and np.allclose(self.cov, other.cov, rtol=0.0, atol=atol)
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` samples, shape ``(n, d)``."""
        chol = np.linalg.cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ chol.T

    def second_moment(self) -> float:
        """``E ||x||^2``."""
        return float(np.trace(self.cov) + self.mean @ self.mean)

    def __repr__(self) -> str:
        if self.dim == 1:
            return f"GaussianDist(mean={self.mean[0]:g}, var={self.cov[0, 0]:g})"
        return f"GaussianDist(mean={self.mean.tolist()}, cov={self.cov.tolist()})"


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to shape ``(n, dim)``; report whether it was a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
        single = True
    elif x.ndim == 1:
        if dim == 1 and x.shape[0] != 1:
            # a batch of 1-d points
            return x.reshape(-1, 1), False
        single = True
        x = x.reshape(1, -1)
    else:
        single = False
    if x.shape[1] != dim:
        raise InvalidModelError(f"point dimension {x.shape[1]} does not match model dimension {dim}")
    return x, single


def gaussian_logpdf(g: GaussianDist, x) -> float | np.ndarray:
    """Normalised log-density of ``g`` at a point or a batch of points."""
    pts, single = _as_points(x, g.dim)
    diff = pts - g.mean
    quad = np.einsum("ni,ij,nj->n", diff, g.precision, diff)
    out = -0.5 * (quad + g.dim * LOG_2PI + g.logdet_cov)
    return float(out[0]) if single else out


def gaussian_grad_logpdf(g: GaussianDist, x) -> np.ndarray:
    """``-cov^{-1} (x - mean)``; shape follows the input."""
    pts, single = _as_points(x, g.dim)
    out = -(pts - g.mean) @ g.precision
    return out[0] if single else out


@dataclass(frozen=True)
class MixtureTarget:
    """``0.5 N(0, 1) + 0.5 N(m, 1)`` on the real line."""

    m: float

    def _component_logs(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        l0 = -0.5 * x**2 - 0.5 * LOG_2PI
        l1 = -0.5 * (x - self.m) ** 2 - 0.5 * LOG_2PI
        return l0, l1

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        l0, l1 = self._component_logs(x)
        return np.logaddexp(l0, l1) - np.log(2.0)

    def grad_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        # responsibility of the component centred at m
        r = expit(self.m * x - 0.5 * self.m**2)
        return -x + r * self.m

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.random(n) < 0.5
        return (rng.standard_normal(n) + np.where(comp, self.m, 0.0)).reshape(n, 1)


def mixture_grad_logpdf(t: MixtureTarget, x):
    return t.grad_logpdf(x)


def mixture_logpdf(t: MixtureTarget, x):
    return t.logpdf(x)


LogDensity = Callable[[np.ndarray], np.ndarray]
Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class TargetPair:
    """Initial distribution ``mu0`` and target ``pi``.

    The callables act on batches of shape ``(n, dim)``: log-densities return
    shape ``(n,)`` and gradients ``(n, dim)``.  The log-densities may be
    unnormalised.  ``mu0_gauss`` / ``pi_gauss`` are set when the closed-form
    Gaussian description is known.
    """

    dim: int
    log_pi: LogDensity
    grad_log_pi: LogDensity
    log_mu0: LogDensity
    grad_log_mu0: LogDensity
    sample_mu0: Sampler
    sample_pi: Sampler | None = None
    mu0_gauss: GaussianDist | None = None
    pi_gauss: GaussianDist | None = None
    label: str = field(default="", compare=False)

    @property
    def is_gaussian(self) -> bool:
        return self.mu0_gauss is not None and self.pi_gauss is not None

    def require_gaussian(self, what: str) -> tuple[GaussianDist, GaussianDist]:
        if not self.is_gaussian:
            raise InvalidModelError(f"{what} requires Gaussian descriptors for mu0 and pi")
        return self.mu0_gauss, self.pi_gauss

    @cached_property
    def log_ratio(self) -> "LogRatioQuadratic":
        """Closed-form log-ratio moments; needs Gaussian descriptors."""
        mu0, pi = self.require_gaussian("log-ratio moments")
        return LogRatioQuadratic(mu0, pi)

    def log_tempered(self, x: np.ndarray, lam: float) -> np.ndarray:
        """Unnormalised ``log pi_lambda = (1 - lambda) log mu0 + lambda log pi``."""
        if lam == 1.0:
            return self.log_pi(x)
        if lam == 0.0:
            return self.log_mu0(x)
        return (1.0 - lam) * self.log_mu0(x) + lam * self.log_pi(x)

    def grad_log_tempered(self, x: np.ndarray, lam: float) -> np.ndarray:
        if lam == 1.0:
            return self.grad_log_pi(x)
        if lam == 0.0:
            return self.grad_log_mu0(x)
        return (1.0 - lam) * self.grad_log_mu0(x) + lam * self.grad_log_pi(x)


def _gauss_callables(g: GaussianDist):
    def logpdf(x):
        return gaussian_logpdf(g, np.asarray(x, dtype=float).reshape(-1, g.dim))

    def grad(x):
        return gaussian_grad_logpdf(g, np.asarray(x, dtype=float).reshape(-1, g.dim))

    return logpdf, grad


def gaussian_pair(mu0: GaussianDist, pi: GaussianDist, label: str = "") -> TargetPair:
    if mu0.dim != pi.dim:
        raise InvalidModelError(f"dimension mismatch: mu0 is {mu0.dim}-d, pi is {pi.dim}-d")
    lp, gp = _gauss_callables(pi)
    l0, g0 = _gauss_callables(mu0)
    return TargetPair(
        dim=pi.dim,
        log_pi=lp,
        grad_log_pi=gp,
        log_mu0=l0,
        grad_log_mu0=g0,
        sample_mu0=mu0.sample,
        sample_pi=pi.sample,
        mu0_gauss=mu0,
        pi_gauss=pi,
        label=label,
    )


def mixture_pair(m: float, mu0: GaussianDist | None = None, label: str = "") -> TargetPair:
    """Mixture target ``0.5 N(0,1) + 0.5 N(m,1)`` started from ``mu0`` (default ``N(0,1)``)."""
    mu0 = mu0 if mu0 is not None else GaussianDist(0.0, 1.0)
    if mu0.dim != 1:
        raise InvalidModelError("the mixture target is one-dimensional")
    mix = MixtureTarget(float(m))
    l0, g0 = _gauss_callables(mu0)
    return TargetPair(
        dim=1,
        log_pi=lambda x: mix.logpdf(np.asarray(x, dtype=float).reshape(-1, 1)[:, 0]),
        grad_log_pi=lambda x: mix.grad_logpdf(np.asarray(x, dtype=float).reshape(-1, 1)),
        log_mu0=l0,
        grad_log_mu0=g0,
        sample_mu0=mu0.sample,
        sample_pi=mix.sample,
        mu0_gauss=mu0,
        pi_gauss=None,
        label=label or f"mixture(m={m:g})",
    )


def kl_gaussian(p: GaussianDist, q: GaussianDist) -> float:
    """``KL(p || q)`` in closed form.

    Uses the eigenvalues ``r_i`` of ``Sigma_q^{-1/2} Sigma_p Sigma_q^{-1/2}``
    and ``sum (r_i - 1) - log1p(r_i - 1)``, which stays accurate when ``p``
    is close to ``q``.
    """
    if p.dim != q.dim:
        raise InvalidModelError(f"dimension mismatch: {p.dim} vs {q.dim}")
    diff = q.mean - p.mean
    if p.dim == 1:
        x = np.array([p.cov[0, 0] / q.cov[0, 0] - 1.0])
    else:
        chol = np.linalg.cholesky(q.cov)
        half = np.linalg.solve(chol, p.cov)
        x = np.linalg.eigvalsh(np.linalg.solve(chol, half.T)) - 1.0
    val = 0.5 * (float(np.sum(x - np.log1p(x))) + float(diff @ q.precision @ diff))
    # rounding can produce tiny negatives for p == q
    return max(val, 0.0)


def interpolated_precision(mu0: GaussianDist, pi: GaussianDist, lam: float) -> np.ndarray:
    """``lam * Sigma_pi^{-1} + (1 - lam) * Sigma_0^{-1}``."""
    return lam * pi.precision + (1.0 - lam) * mu0.precision


def geometric_interpolant(tp: TargetPair, alpha: float) -> GaussianDist:
    """Gaussian ``rho_alpha ~ mu0^(1-alpha) pi^alpha``, computed in natural parameters."""
    mu0, pi = tp.require_gaussian("geometric_interpolant")
    if alpha == 0.0:
        return mu0
    if alpha == 1.0:
        return pi
    prec = interpolated_precision(mu0, pi, alpha)
    try:
        _check_pd(0.5 * (prec + prec.T), "interpolated precision")
    except InvalidModelError as exc:
        raise InvalidInterpolantError(f"alpha={alpha}: {exc}") from None
    shift = (1.0 - alpha) * mu0.precision @ mu0.mean + alpha * pi.precision @ pi.mean
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return GaussianDist(cov @ shift, cov)


def _log_ratio_coeffs(mu0: GaussianDist, pi: GaussianDist):
    """``log mu0(x) - log pi(x) = 0.5 x'Ax + b'x + c`` for normalised densities."""
    a = pi.precision - mu0.precision
    b = mu0.precision @ mu0.mean - pi.precision @ pi.mean
    c = (
        -0.5 * mu0.mean @ mu0.precision @ mu0.mean
        + 0.5 * pi.mean @ pi.precision @ pi.mean
        - 0.5 * mu0.logdet_cov
        + 0.5 * pi.logdet_cov
    )
    return a, b, float(c)


class LogRatioQuadratic:
    """Closed-form moments of ``s = log mu0 - log pi`` along the geometric path.

    Works on raw arrays (plain floats in 1D) so the adaptive-schedule
    integrators can query it at every RK4 stage cheaply.
    """

    def __init__(self, mu0: GaussianDist, pi: GaussianDist):
        self.a, self.b, self.c = _log_ratio_coeffs(mu0, pi)
        self.p0, self.pp = mu0.precision, pi.precision
        self.h0 = mu0.precision @ mu0.mean
        self.hp = pi.precision @ pi.mean
        self.dim = mu0.dim
        if self.dim == 1:
            self._s = tuple(float(v) for v in (self.a[0, 0], self.b[0], self.p0[0, 0], self.pp[0, 0], self.h0[0], self.hp[0]))

    def interpolant(self, alpha: float):
        """``(mean, cov)`` of ``rho_alpha``; floats in 1D."""
        if self.dim == 1:
            _, _, p0, pp, h0, hp = self._s
            v = 1.0 / ((1.0 - alpha) * p0 + alpha * pp)
            return v * ((1.0 - alpha) * h0 + alpha * hp), v
        prec = (1.0 - alpha) * self.p0 + alpha * self.pp
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        return cov @ ((1.0 - alpha) * self.h0 + alpha * self.hp), cov

    def mean(self, m, cov) -> float:
        """``E[s]`` under ``N(m, cov)``."""
        if self.dim == 1 and np.ndim(m) == 0:
            a, b = self._s[0], self._s[1]
            return 0.5 * a * cov + 0.5 * a * m * m + b * m + self.c
        m = np.atleast_1d(m)
        cov = np.atleast_2d(cov)
        a = self.a
        return float(0.5 * np.trace(a @ cov) + 0.5 * m @ a @ m + self.b @ m + self.c)

    def variance(self, m, cov) -> float:
        """``Var[s]`` under ``N(m, cov)``."""
        if self.dim == 1 and np.ndim(m) == 0:
            a, b = self._s[0], self._s[1]
            lin = a * m + b
            return 0.5 * (a * cov) ** 2 + lin * lin * cov
        m = np.atleast_1d(m)
        cov = np.atleast_2d(cov)
        a = self.a
        lin = a @ m + self.b
        return float(0.5 * np.trace(a @ cov @ a @ cov) + lin @ cov @ lin)

    def variance_at(self, alpha):
        """``Var_{rho_alpha}(s)``; vectorised over ``alpha`` in 1D."""
        if self.dim == 1:
            a, b = self._s[0], self._s[1]
            m, v = self.interpolant(np.asarray(alpha, dtype=float) if np.ndim(alpha) else alpha)
            lin = a * m + b
            return 0.5 * (a * v) ** 2 + lin * lin * v
        if np.ndim(alpha):
            return np.array([self.variance(*self.interpolant(al)) for al in np.ravel(alpha)]).reshape(np.shape(alpha))
        return self.variance(*self.interpolant(alpha))

    def mean_at(self, alpha):
        """``E_{rho_alpha}[s]``; vectorised over ``alpha`` in 1D."""
        if self.dim == 1:
            a, b = self._s[0], self._s[1]
            m, v = self.interpolant(np.asarray(alpha, dtype=float) if np.ndim(alpha) else alpha)
            return 0.5 * a * v + 0.5 * a * m * m + b * m + self.c
        if np.ndim(alpha):
            return np.array([self.mean(*self.interpolant(al)) for al in np.ravel(alpha)]).reshape(np.shape(alpha))
        return self.mean(*self.interpolant(alpha))


def expected_log_ratio(tp: TargetPair, g: GaussianDist) -> float:
    """``E_g[log mu0 - log pi]`` for normalised Gaussian endpoints."""
    mu0, pi = tp.require_gaussian("expected_log_ratio")
    a, b, c = _log_ratio_coeffs(mu0, pi)
    m = g.mean
    return float(0.5 * np.trace(a @ g.cov) + 0.5 * m @ a @ m + b @ m + c)


def gaussian_log_ratio_variance(tp: TargetPair, g: GaussianDist) -> float:
    """``Var_g(log mu0 - log pi)`` for any Gaussian ``g``."""
    mu0, pi = tp.require_gaussian("log_ratio_variance")
    a, b, _ = _log_ratio_coeffs(mu0, pi)
    s = g.cov
    lin = a @ g.mean + b
    return float(0.5 * np.trace(a @ s @ a @ s) + lin @ s @ lin)


def log_ratio_variance(tp: TargetPair, alpha: float) -> float:
    """``Var_{rho_alpha}(log mu0/pi)`` in closed form."""
    return gaussian_log_ratio_variance(tp, geometric_interpolant(tp, alpha))


def lsi_constant_mixture(m: float) -> float:
    """Log-Sobolev constant of the equal-weight unit-variance mixture."""
    return 1.0 + (np.exp(m**2) + 1.0) / 2.0
