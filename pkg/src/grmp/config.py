"""Experiment configuration: nested YAML sections mapped onto dataclasses.

A config file looks like::

    seed: 7
    rounds: 20
    agents: 6
    attackers: 2
    dataset: {dirichlet_alpha: 1.0, trigger: {source_class: 3, target_class: 2}}
    train: {learning_rate: 0.5, local_steps: 5}
    attack: {strategy: grmp, d_t: 1.0}
    defense: {name: dynamic_cosine, kappa: 2.0}

Every key is optional; unknown keys are rejected so typos fail loudly.
The ``GRMP_OUTPUT_DIR`` environment variable overrides ``output_dir``.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .attack.pipeline import AttackConfig
from .dataset import DatasetConfig, TriggerSpec
from .defenses import DefenseConfig
from .errors import ConfigError
from .model import TrainConfig

OUTPUT_ENV = "GRMP_OUTPUT_DIR"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    rounds: int = 20
    agents: int = 6
    attackers: int = 2
    repeats: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    output_dir: str = "runs"

    def validate(self) -> None:
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.agents < 1:
            raise ConfigError("agents must be >= 1")
        if not 0 <= self.attackers < self.agents:
            raise ConfigError(f"attackers must lie in [0, agents), got {self.attackers} of {self.agents}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.dataset.n_agents != self.agents:
            raise ConfigError("dataset.n_agents must equal agents")
        self.dataset.validate()
        self.train.validate()
        self.attack.validate()
        self.defense.validate()

    @property
    def benign_ids(self) -> list[int]:
        return list(range(self.agents - self.attackers))

    @property
    def attacker_ids(self) -> list[int]:
        return list(range(self.agents - self.attackers, self.agents))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        cfg = replace(self, **kw)
        if cfg.dataset.n_agents != cfg.agents:
            cfg = replace(cfg, dataset=replace(cfg.dataset, n_agents=cfg.agents))
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.dataset.dirichlet_alpha):
            d["dataset"]["dirichlet_alpha"] = "inf"
        d["dataset"]["trigger"]["dims"] = list(self.dataset.trigger.dims)
        del d["dataset"]["n_agents"]
        return d


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return cls(**data)


def _float(value, where):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", ".inf"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")

    ds = dict(data.pop("dataset", None) or {})
    if "n_agents" in ds:
        raise ConfigError("dataset.n_agents is derived from agents; set agents instead")
    trig = _build(TriggerSpec, ds.pop("trigger", None), "dataset.trigger")
    trig = replace(trig, dims=tuple(int(d) for d in trig.dims), magnitude=float(trig.magnitude))
    for key in ("class_separation", "noise_std", "dirichlet_alpha"):
        if key in ds:
            ds[key] = _float(ds[key], f"dataset.{key}")
    agents = int(data.get("agents", ExperimentConfig.agents))
    dataset = replace(_build(DatasetConfig, ds, "dataset"), trigger=trig, n_agents=agents)

    cfg = ExperimentConfig(
        **{k: v for k, v in data.items() if k not in ("train", "attack", "defense")},
        dataset=dataset,
        train=_build(TrainConfig, data.get("train"), "train"),
        attack=_build(AttackConfig, data.get("attack"), "attack"),
        defense=_build(DefenseConfig, data.get("defense"), "defense"),
    )
    for name in ("seed", "rounds", "agents", "attackers", "repeats"):
        if not isinstance(getattr(cfg, name), int) or isinstance(getattr(cfg, name), bool):
            raise ConfigError(f"{name} must be an integer")
    try:
        cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"bad value type: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_output_dir(cfg: ExperimentConfig, cli_out: str | None = None) -> Path:
    """``--out`` beats the environment variable, which beats the config file."""
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
