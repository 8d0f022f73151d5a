"""Tempered Wasserstein, Fisher-Rao and Wasserstein-Fisher-Rao sampling dynamics.

Exact Gaussian moment flows, particle samplers (tempered ULA, SMC-T-WFR,
tempering SMC), fixed and adaptive tempering schedules and evaluators for
the associated KL convergence bounds.
"""

from tempflow.bounds import prop22_rhs, prop24_rhs, prop25_gap, prop27_rhs, prop28_rhs
from tempflow.gaussian_flows import FlowKind, integrate_flow, kl_along
from tempflow.metrics import MmdConfig, mmd2
from tempflow.models import (
    GaussianDist,
    InvalidModelError,
    MixtureTarget,
    TargetPair,
    gaussian_pair,
    geometric_interpolant,
    kl_gaussian,
    mixture_pair,
)
from tempflow.samplers import ParticleSystem, SamplerConfig, run_sampler
from tempflow.schedules import AdaptiveScheduleState, FixedSchedule, beta_value, integrate_schedule

__version__ = "0.1.0"

__all__ = [
    "AdaptiveScheduleState",
    "FixedSchedule",
    "FlowKind",
    "GaussianDist",
    "InvalidModelError",
    "MixtureTarget",
    "MmdConfig",
    "ParticleSystem",
    "SamplerConfig",
    "TargetPair",
    "beta_value",
    "gaussian_pair",
    "geometric_interpolant",
    "integrate_flow",
    "integrate_schedule",
    "kl_along",
    "kl_gaussian",
    "mixture_pair",
    "mmd2",
    "prop22_rhs",
    "prop24_rhs",
    "prop25_gap",
    "prop27_rhs",
    "prop28_rhs",
    "run_sampler",
    "__version__",
]
