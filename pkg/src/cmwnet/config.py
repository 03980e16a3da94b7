"""Declarative experiment configuration.

YAML in, fully resolved dataclasses out. Every default is materialized into
the resolved config, and the snapshot written next to a run's artifacts is
itself a valid config, so any result can be regenerated from (snapshot,
seed) alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from . import biasgen
from .biasgen import BiasSpec, Dataset

VARIANTS = ("cmwnet", "cmwnet-sl", "erm", "mwnet", "meta-test")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass
class DatasetConfig:
    C: int = 10
    d: int = 8
    n_per_class: int = 500
    separation: float = 6.0
    sigma: float = 1.0
    seed: int = 0
    bias: list[dict] = field(default_factory=list)

    def validate(self):
        if self.C < 2:
            raise ConfigError("dataset.C must be >= 2")
        if self.d < 1:
            raise ConfigError("dataset.d must be >= 1")
        if self.n_per_class < 1:
            raise ConfigError("dataset.n_per_class must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("dataset.sigma must be positive")
        for i, spec in enumerate(self.bias):
            try:
                BiasSpec(**spec)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"dataset.bias[{i}]: {e}") from e


@dataclass
class TestSetConfig:
    n_per_class: int = 100
    seed: int = 1


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    K: int = 3
    H: int = 100
    normalize: bool = True
    loss_clamp: float | None = 50.0

    def validate(self):
        if self.K < 1:
            raise ConfigError("model.K must be >= 1")
        if self.H < 1:
            raise ConfigError("model.H must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("model.hidden entries must be >= 1")


@dataclass
class TrainConfig:
    variant: str = "cmwnet"
    epochs: int = 60
    batch_size: int = 100
    meta_batch_size: int = 100
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    theta_lr: float = 1e-3
    theta_weight_decay: float = 1e-4
    theta_optimizer: str = "adam"
    t_meta: int = 1
    warmup_epochs: int = 5
    meta_per_class: int = 10
    mixup_meta: bool = True
    meta_labels: str = "observed"          # or "pseudo" (soft-label variant)
    schedule: dict = field(default_factory=lambda: {
        "kind": "piecewise", "milestones": [0.6, 0.8], "gamma": 0.1})
    sl: dict = field(default_factory=lambda: {
        "alpha_te": 0.9, "beta_wa": 0.99, "gamma": 1.0})
    checkpoint: str | None = None          # Theta* source for meta-test

    def validate(self, model: ModelConfig):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"train.variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "mwnet" and model.K != 1:
            raise ConfigError("train.variant=mwnet requires model.K=1")
        if self.variant == "meta-test" and not self.checkpoint:
            raise ConfigError("train.variant=meta-test requires train.checkpoint")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if self.batch_size < 1 or self.meta_batch_size < 1:
            raise ConfigError("train batch sizes must be >= 1")
        if self.t_meta < 1:
            raise ConfigError("train.t_meta must be >= 1")
        if self.theta_optimizer not in ("adam", "sgd"):
            raise ConfigError("train.theta_optimizer must be 'adam' or 'sgd'")
        if self.meta_labels not in ("observed", "pseudo"):
            raise ConfigError("train.meta_labels must be 'observed' or 'pseudo'")
        if self.schedule.get("kind") not in ("piecewise", "decay"):
            raise ConfigError("train.schedule.kind must be 'piecewise' or 'decay'")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    test: TestSetConfig = field(default_factory=TestSetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self):
        self.dataset.validate()
        self.model.validate()
        self.train.validate(self.model)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"dataset": DatasetConfig, "test": TestSetConfig,
             "model": ModelConfig, "train": TrainConfig}


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = set(_SECTIONS) | {"seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        valid = {f for f in cls.__dataclass_fields__}
        bad = set(section) - valid
        if bad:
            raise ConfigError(f"unknown field(s) in {name!r}: {sorted(bad)}")
        kwargs[name] = cls(**section)
    cfg = ExperimentConfig(seed=data.get("seed", 0), **kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def save_config(path, cfg: ExperimentConfig) -> None:
    """Write the fully resolved config (all defaults materialized)."""
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True,
                       default_flow_style=False)


# ---------------------------------------------------------------------------
# dataset realization


def build_train_dataset(cfg: ExperimentConfig) -> Dataset:
    dc = cfg.dataset
    ds = biasgen.make_gaussian_classes(dc.C, dc.d, dc.n_per_class,
                                       dc.separation, dc.sigma, dc.seed)
    for spec in dc.bias:
        ds = BiasSpec(**spec).apply(ds)
    return ds


def build_test_dataset(cfg: ExperimentConfig) -> Dataset:
    dc = cfg.dataset
    return biasgen.make_gaussian_classes(dc.C, dc.d, cfg.test.n_per_class,
                                         dc.separation, dc.sigma,
                                         cfg.test.seed)
