"""Discrepancies and diagnostics for particle output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tempflow.models import GaussianDist, InvalidModelError, TargetPair, kl_gaussian

ESTIMATORS = ("v_statistic", "u_statistic")
_BLOCK = 2048


@dataclass(frozen=True)
class MmdConfig:
    bandwidth: float = 1.0
    estimator: str = "v_statistic"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def _kernel(x: np.ndarray, y: np.ndarray, bw: float) -> np.ndarray:
    if x.shape[1] == 1:
        sq = (x[:, 0][:, None] - y[:, 0][None, :]) ** 2
    else:
        sq = np.sum(x**2, 1)[:, None] - 2.0 * x @ y.T + np.sum(y**2, 1)[None, :]
        sq = np.maximum(sq, 0.0)
    return np.exp(-0.5 * sq / bw**2)


def _kernel_sum(x, wx, y, wy, bw: float) -> float:
    """``wx' K(x, y) wy`` accumulated over row blocks of ``x``."""
    total = 0.0
    for lo in range(0, len(x), _BLOCK):
        total += float(wx[lo : lo + _BLOCK] @ (_kernel(x[lo : lo + _BLOCK], y, bw) @ wy))
    return total


def _self_term(x, w, cfg: MmdConfig) -> float:
    full = _kernel_sum(x, w, x, w, cfg.bandwidth)
    if cfg.estimator == "v_statistic":
        return full
    # the Gaussian kernel is 1 on the diagonal
    sq = float(np.sum(w**2))
    return (full - sq) / (1.0 - sq)


def mmd2(x, y, cfg: MmdConfig = MmdConfig(), wx=None, wy=None) -> float:
    """Squared MMD between weighted samples with a Gaussian kernel.

    ``x`` may be a :class:`~tempflow.samplers.ParticleSystem`, in which case
    its weights are used.  The U-statistic drops the diagonal of each
    within-sample sum (with weight-aware normalisation).
    """
    if hasattr(x, "positions"):
        x, wx = x.positions, x.weights
    if hasattr(y, "positions"):
        y, wy = y.positions, y.weights
    x, y = _points(x), _points(y)
    if x.shape[1] != y.shape[1]:
        raise InvalidModelError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    wx, wy = _weights(wx, len(x)), _weights(wy, len(y))
    cross = _kernel_sum(x, wx, y, wy, cfg.bandwidth)
    return _self_term(x, wx, cfg) + _self_term(y, wy, cfg) - 2.0 * cross


class MmdToReference:
    """MMD against a fixed reference sample, caching the reference self-term."""

    def __init__(self, ref, cfg: MmdConfig = MmdConfig()):
        self.ref = _points(ref)
        self.cfg = cfg
        self.wr = _weights(None, len(self.ref))
        self.ref_term = _self_term(self.ref, self.wr, cfg)

    def __call__(self, x, wx=None) -> float:
        if hasattr(x, "positions"):
            x, wx = x.positions, x.weights
        x = _points(x)
        wx = _weights(wx, len(x))
        cross = _kernel_sum(x, wx, self.ref, self.wr, self.cfg.bandwidth)
        return _self_term(x, wx, self.cfg) + self.ref_term - 2.0 * cross


def empirical_log_ratio_variance(ps, tp: TargetPair) -> float:
    """Weighted variance of ``log mu0 - log pi`` over the particles."""
    x = ps.positions
    s = np.asarray(tp.log_mu0(x), dtype=float).reshape(-1) - np.asarray(tp.log_pi(x), dtype=float).reshape(-1)
    if not np.all(np.isfinite(s)):
        raise InvalidModelError("non-finite log-density at a particle")
    w = ps.weights
    mean = w @ s
    return float(max(w @ (s - mean) ** 2, 0.0))


def iterations_to_threshold(values, threshold: float) -> int | None:
    """Index of the first value below ``threshold``, or ``None``."""
    below = np.flatnonzero(np.asarray(values, dtype=float) < threshold)
    return int(below[0]) if below.size else None


def gaussian_fit(ps) -> GaussianDist:
    """Weighted moment-matched Gaussian of a particle system."""
    cov = np.atleast_2d(ps.cov())
    return GaussianDist(ps.mean(), 0.5 * (cov + cov.T))


def gaussian_fit_kl(ps, pi: GaussianDist) -> float:
    """``KL(N(mean, cov) || pi)`` for the weighted moments of ``ps``."""
    return kl_gaussian(gaussian_fit(ps), pi)
