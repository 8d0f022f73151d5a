"""Experiment configuration: a strict YAML schema validated with pydantic.

Unknown keys are rejected with their dotted path.  Every block has defaults,
so an empty file (or no file) runs the desk-scale version of an experiment.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tempflow.models import GaussianDist, InvalidModelError, TargetPair, gaussian_pair, mixture_pair
from tempflow.schedules import AdaptiveScheduleState, FixedSchedule

EXPERIMENTS = ("flows", "mixture", "smc_compare", "schedules", "bounds", "sample")
STOCHASTIC = ("mixture", "smc_compare", "schedules", "sample")
FLOW_NAMES = ("W", "FR", "WFR", "T-W", "T-FR", "T-WFR")

Vector = Union[float, list[float]]
Matrix = Union[float, list[float], list[list[float]]]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GaussianSpec(_Strict):
    mean: Vector = 0.0
    cov: Matrix = 1.0

    def build(self) -> GaussianDist:
        return GaussianDist(self.mean, self.cov)


class TargetSpec(_Strict):
    kind: Literal["gaussian", "mixture"] = "gaussian"
    mean: Vector | None = None
    cov: Matrix | None = None
    m: float | None = None

    @model_validator(mode="after")
    def _fields_match_kind(self):
        if self.kind == "gaussian":
            if self.m is not None:
                raise ValueError("'m' only applies to kind=mixture")
        elif self.mean is not None or self.cov is not None:
            raise ValueError("'mean'/'cov' only apply to kind=gaussian")
        return self


class ModelConfig(_Strict):
    mu0: GaussianSpec = GaussianSpec()
    pi: TargetSpec = TargetSpec(mean=20.0, cov=0.1)

    def pair(self, m: float | None = None) -> TargetPair:
        """The target pair; ``m`` overrides the mixture separation."""
        mu0 = self.mu0.build()
        if self.pi.kind == "mixture":
            sep = m if m is not None else self.pi.m
            if sep is None:
                raise InvalidModelError("mixture target needs 'm'")
            return mixture_pair(sep, mu0)
        mean = 20.0 if self.pi.mean is None else self.pi.mean
        cov = 0.1 if self.pi.cov is None else self.pi.cov
        return gaussian_pair(mu0, GaussianDist(mean, cov))


class ScheduleConfig(_Strict):
    kind: Literal["constant", "linear", "exponential", "chehab", "grad_flow", "constant_kl", "ess"] = "linear"
    T: float | None = Field(default=None, gt=0)
    rate: float = Field(default=0.01, gt=0)
    value: float = Field(default=1.0, ge=0, le=1)
    beta_param: float = Field(default=1.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)

    def build(self, horizon: float | None = None):
        """A :class:`FixedSchedule`, or a fresh :class:`AdaptiveScheduleState`.

        The linear schedule uses ``T`` if given, otherwise ``horizon``.
        """
        if self.kind == "constant":
            return FixedSchedule.constant(self.value)
        if self.kind == "linear":
            T = self.T if self.T is not None else horizon
            if T is None:
                raise InvalidModelError("linear schedule needs an explicit horizon 'schedule.T'")
            return FixedSchedule.linear(T)
        if self.kind == "exponential":
            return FixedSchedule.exponential(self.rate)
        if self.kind == "chehab":
            return FixedSchedule.chehab()
        return AdaptiveScheduleState(self.kind, beta_param=self.beta_param)


class SamplerBlock(_Strict):
    algorithm: Literal["tula", "smc_twfr", "tempering_smc"] = "smc_twfr"
    N: int = Field(default=400, ge=2)
    gammas: Union[float, list[float]] = 0.001
    T: int = Field(default=1000, ge=0)
    resample: Literal["every_step", "ess_threshold"] = "every_step"
    ess_tau: float = Field(default=0.5, gt=0, le=1)
    snapshot_every: int = Field(default=100, ge=0)

    @model_validator(mode="after")
    def _positive_steps(self):
        g = self.gammas if isinstance(self.gammas, list) else [self.gammas]
        if any(not x > 0 for x in g):
            raise ValueError("step sizes must be positive")
        if isinstance(self.gammas, list) and len(self.gammas) < self.T:
            raise ValueError(f"need {self.T} step sizes, got {len(self.gammas)}")
        return self

    @property
    def resample_mode(self):
        return "every_step" if self.resample == "every_step" else ("ess_threshold", self.ess_tau)

    def horizon(self) -> float:
        if isinstance(self.gammas, list):
            return float(sum(self.gammas[: self.T]))
        return self.gammas * self.T


class MetricsBlock(_Strict):
    bandwidth: float = Field(default=1.0, gt=0)
    estimator: Literal["v_statistic", "u_statistic"] = "v_statistic"
    reference_size: int | None = Field(default=None, ge=2)
    threshold: float = Field(default=0.01, gt=0)
    every: int = Field(default=5, ge=1)


class FlowsBlock(_Strict):
    t_end: float = Field(default=10.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    record_every: int = Field(default=1, ge=1)
    kinds: list[Literal["W", "FR", "WFR", "T-W", "T-FR", "T-WFR"]] = list(FLOW_NAMES)
    fr_attractor: Literal["target", "interpolant"] = "target"


class MixtureBlock(_Strict):
    m_grid: list[float] = [1.0, 2.0, 3.0]
    replications: int = Field(default=10, ge=1)
    paper_m_grid: list[float] = [1.0, 2.0, 3.0, 4.0, 5.0]
    paper_replications: int = Field(default=50, ge=1)
    methods: list[Literal["W", "WFR"]] = ["W", "WFR"]
    schedules: list[Literal["none", "linear", "exponential", "chehab"]] = ["none", "linear", "exponential", "chehab"]
    N: int = Field(default=500, ge=2)
    gamma: float = Field(default=0.1, gt=0)
    T: int = Field(default=400, ge=1)


class SmcCompareBlock(_Strict):
    gammas: list[float] = [0.001, 0.01, 0.1]
    T: int = Field(default=1000, ge=1)
    N: int = Field(default=400, ge=2)
    seeds: int = Field(default=5, ge=1)
    dt: float = Field(default=1e-3, gt=0)
    fr_attractor: Literal["target", "interpolant"] = "target"


class SchedulesBlock(_Strict):
    variants: list[Literal["ula", "grad_flow", "constant_kl", "ess"]] = ["ula", "grad_flow", "constant_kl", "ess"]
    N: int = Field(default=500, ge=2)
    gamma: float = Field(default=0.01, gt=0)
    T: int = Field(default=500, ge=1)
    seeds: int = Field(default=5, ge=1)
    paper_seeds: int = Field(default=5, ge=1)


class Prop28Block(_Strict):
    gamma: float = Field(default=0.1, gt=0, le=1)
    n_steps: int = Field(default=50, ge=1)


class BoundsBlock(_Strict):
    t_end: float = Field(default=10.0, gt=0)
    n_points: int = Field(default=101, ge=2)
    eps: float | None = Field(default=None, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    prop28: Prop28Block = Prop28Block()


class ExperimentConfig(_Strict):
    experiment: Literal["flows", "mixture", "smc_compare", "schedules", "bounds", "sample"] | None = None
    seed: int | None = Field(default=None, ge=0, lt=2**64)
    out: str | None = None
    model: ModelConfig = ModelConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    sampler: SamplerBlock = SamplerBlock()
    metrics: MetricsBlock = MetricsBlock()
    flows: FlowsBlock = FlowsBlock()
    mixture: MixtureBlock = MixtureBlock()
    smc_compare: SmcCompareBlock = SmcCompareBlock()
    schedules: SchedulesBlock = SchedulesBlock()
    bounds: BoundsBlock = BoundsBlock()
    paper_scale: bool = False

    def canonical_json(self) -> str:
        """Sorted-key JSON of everything that affects results (the output directory does not)."""
        return json.dumps(self.model_dump(mode="json", exclude={"out"}), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def _needs_model(cfg: ExperimentConfig) -> None:
    exp = cfg.experiment
    gaussian_only = ("flows", "smc_compare", "bounds")
    if exp in gaussian_only and cfg.model.pi.kind != "gaussian":
        raise ConfigError(f"model.pi.kind: experiment {exp!r} needs a Gaussian target")
    if exp in ("mixture", "schedules") and cfg.model.pi.kind != "mixture":
        raise ConfigError(f"model.pi.kind: experiment {exp!r} needs the mixture target")
    if exp == "sample" and cfg.model.pi.kind == "mixture" and cfg.model.pi.m is None:
        raise ConfigError("model.pi.m: mixture target needs 'm'")
    try:
        if exp == "mixture":
            cfg.model.mu0.build()
        else:
            cfg.model.pair()
    except InvalidModelError as exc:
        raise ConfigError(f"model: {exc}") from None
    if exp in ("flows", "bounds", "smc_compare") and cfg.schedule.kind in ("grad_flow", "constant_kl", "ess"):
        raise ConfigError(f"schedule.kind: experiment {exp!r} takes a fixed schedule")
    if exp == "sample" and cfg.schedule.kind == "linear" and cfg.schedule.T is None and cfg.sampler.horizon() <= 0:
        raise ConfigError("schedule.T: linear schedule needs a horizon")


def load_config(
    path: str | Path | None = None,
    experiment: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    paper_scale: bool = False,
) -> ExperimentConfig:
    """Read, merge command-line overrides into, and validate a config.

    Raises :class:`ConfigError` with the offending key path on any problem.
    """
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    if experiment is not None:
        if raw.get("experiment") not in (None, experiment):
            raise ConfigError(f"experiment: config is for {raw['experiment']!r}, subcommand is {experiment!r}")
        raw["experiment"] = experiment
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    if paper_scale:
        raw["paper_scale"] = True
    model = raw.get("model")
    if raw.get("experiment") in ("mixture", "schedules") and (model is None or (isinstance(model, dict) and "pi" not in model)):
        # these experiments default to the two-component mixture target
        raw["model"] = {**(model or {}), "pi": {"kind": "mixture", "m": 2.0}}
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    if cfg.experiment is None:
        raise ConfigError("experiment: not set (pass a subcommand or set 'experiment')")
    if cfg.experiment in STOCHASTIC and cfg.seed is None:
        raise ConfigError(f"seed: experiment {cfg.experiment!r} is stochastic and needs a seed")
    _needs_model(cfg)
    return cfg
