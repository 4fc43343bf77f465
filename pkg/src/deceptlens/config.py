"""Experiment configuration: one JSON document for the model and the training run.

Either sectioned::

    {"model": {"architecture": "coatt", "d": 48}, "train": {"optimizer": "adam"}}

or flat, with keys taken from both field sets.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ParseError
from .models import ModelConfig
from .training import TrainConfig


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return {"model": self.model.to_dict(), "train": self.train.to_dict()}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self):
        self.model.validate()
        self.train.validate()
        return self


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if set(data) <= {"model", "train"}:
        model = data.get("model", {})
        train = data.get("train", {})
    else:
        model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(data) - model_keys - train_keys
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        model = {k: v for k, v in data.items() if k in model_keys}
        train = {k: v for k, v in data.items() if k in train_keys}
    try:
        return ExperimentConfig(ModelConfig.from_dict(model), TrainConfig.from_dict(train))
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
