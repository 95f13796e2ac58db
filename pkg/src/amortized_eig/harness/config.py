"""Experiment configuration read from TOML. Unknown keys are errors."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..flow.config import EncoderConfig, FlowConfig
from ..models import GlmModel
from ..trainer import TrainConfig

KINDS = ("amortization", "model", "archstudy", "oracle-check")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str = "normal"
    n_predictors: int = 1
    prior_scale: float = 1.0
    prior_mean: list | None = None
    prior_cov: list | None = None
    noise_sd: float = 1.0
    a_p: float = 3.5
    b_p: float = 3.5
    n_trials: int = 10
    n_classes: int = 3

    def build(self) -> GlmModel:
        kw = dict(noise_sd=self.noise_sd, a_p=self.a_p, b_p=self.b_p,
                  n_trials=self.n_trials, n_classes=self.n_classes)
        probe = GlmModel(self.family, self.n_predictors, **kw)
        cov = np.asarray(self.prior_cov, float) if self.prior_cov is not None else self.prior_scale * np.eye(probe.param_dim)
        mean = None if self.prior_mean is None else np.asarray(self.prior_mean, float)
        return GlmModel(self.family, self.n_predictors, prior_mean=mean, prior_cov=cov, **kw)


@dataclass(frozen=True)
class EvalSpec:
    n_eval_designs: int = 50
    n_runs: int = 20
    posterior_n: int = 1000
    vnmc_n: int = 200
    vnmc_m: int = 15
    nmc_n: int = 5000
    nmc_m: int = 70
    oracle_n: int = 100_000
    record_timing: bool = False  # per-row seconds break byte-identical reruns

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and v < 1:
                raise ConfigError(f"evaluation.{f.name} must be >= 1")


@dataclass(frozen=True)
class ArchSpec:
    encoders: tuple = ("attention", "residual")
    transforms: tuple = ("affine-coupling", "rq-spline", "none")
    counts: tuple = (4, 8)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "model"
    seed: int = 0
    out: str = "results"
    model: ModelSpec = field(default_factory=ModelSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: TrainConfig = field(default_factory=lambda: TrainConfig(steps=5000, designs_per_step=1,
                                                                      mc_samples=50, learning_rate=1e-3))
    evaluation: EvalSpec = field(default_factory=EvalSpec)
    archstudy: ArchSpec = field(default_factory=ArchSpec)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self, seed=seed,
            train=dataclasses.replace(self.train, seed=seed),
            baseline=dataclasses.replace(self.baseline, seed=seed),
        )

    def desk_scale(self) -> "ExperimentConfig":
        """Shrink budgets to the desk profile; leaves the model block alone."""
        return dataclasses.replace(
            self,
            train=dataclasses.replace(self.train, steps=500, designs_per_step=10, mc_samples=25),
            evaluation=dataclasses.replace(self.evaluation, posterior_n=1000, vnmc_n=200, vnmc_m=15,
                                           nmc_n=5000, nmc_m=70),
        )


REFERENCE_TRAIN = TrainConfig(steps=5000, designs_per_step=50, mc_samples=50, learning_rate=5e-4)
REFERENCE_EVAL = EvalSpec(posterior_n=5000, vnmc_n=1000, vnmc_m=31, nmc_n=30000, nmc_m=173)

_SECTIONS = {
    "model": ModelSpec, "encoder": EncoderConfig, "flow": FlowConfig, "train": TrainConfig,
    "baseline": TrainConfig, "evaluation": EvalSpec, "archstudy": ArchSpec,
}
_TOP = ("kind", "seed", "out")


def _build(cls, section: str, values: dict, base=None):
    known = {f.name for f in fields(cls) if not f.name.startswith("_")}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) and cls is ArchSpec else v for k, v in values.items()}
    try:
        return dataclasses.replace(base, **values) if base is not None else cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_TOP) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    defaults = ExperimentConfig()
    kw = {k: data[k] for k in _TOP if k in data}
    for name, cls in _SECTIONS.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            kw[name] = _build(cls, name, data[name], getattr(defaults, name))
    try:
        cfg = ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    seed = kw.get("seed")
    if seed is not None:
        # the top-level seed wins unless a section pins its own
        cfg = dataclasses.replace(
            cfg,
            train=cfg.train if "seed" in data.get("train", {}) else dataclasses.replace(cfg.train, seed=seed),
            baseline=cfg.baseline if "seed" in data.get("baseline", {}) else dataclasses.replace(cfg.baseline, seed=seed),
        )
    try:
        cfg.model.build()
    except ValueError as exc:
        raise ConfigError(f"[model]: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)
