"""JSON run configuration with strict key checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum

from .color import ColorHistConfig
from .evaluation import Metric, Protocol
from .losses import LossConfig
from .model import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    protocol: Protocol = Protocol.CC
    metric: Metric = Metric.COSINE

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "metric", Metric(self.metric))


SECTIONS = {
    "model": ModelConfig,
    "color": ColorHistConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    color: ColorHistConfig = field(default_factory=ColorHistConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section {sorted(unknown)[0]!r}")
        parts = {}
        for name, klass in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown key {name}.{sorted(bad)[0]}")
            try:
                parts[name] = klass(**section)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid {name} section: {e}") from None
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        def plain(obj):
            d = asdict(obj)
            return {k: (v.value if isinstance(v, Enum) else list(v) if isinstance(v, tuple) else v)
                    for k, v in d.items()}

        return {name: plain(getattr(self, name)) for name in SECTIONS}

    def with_model(self, **changes) -> "RunConfig":
        return replace(self, model=replace(self.model, **changes))


def default_config_json() -> str:
    return json.dumps(RunConfig().to_dict(), indent=2)
