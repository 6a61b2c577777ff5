"""Experiment configuration: strict JSON with per-section key validation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .autoencoder import AutoencoderConfig
from .errors import ConfigError
from .trainer import TrainConfig

_DATASET_KEYS = {"objects", "labels", "attributes", "classes"}
_AUTOENCODER_KEYS = {"variant", "latent_dim", "hidden", "kl_weight", "epochs",
                     "batch_size", "learning_rate"}
_FLOW_KEYS = {"family", "layers", "blocks", "hidden", "batch_norm", "log_scale_clamp"}
_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "validation_fraction",
               "patience", "grad_clip"}
_PATH_KEYS = {"autoencoder", "latent_dataset", "flow", "loss_history"}
_TASK_KEYS = {"prior", "sample_count", "image_shape"}
_TOP_KEYS = {"seed", "dataset", "autoencoder", "flow", "train", "paths", "tasks"}


def _require_known(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; "
                          f"allowed: {sorted(allowed)}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: dict = field(default_factory=dict)
    autoencoder: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    tasks: dict = field(default_factory=dict)
    base_dir: str = "."

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def dataset_path(self, key: str, required: bool = True) -> str | None:
        if key not in self.dataset:
            if required:
                raise ConfigError(f"config dataset section is missing {key!r}")
            return None
        return self.resolve(self.dataset[key])

    def artifact_path(self, key: str) -> str:
        if key not in self.paths:
            raise ConfigError(f"config paths section is missing {key!r}")
        return self.resolve(self.paths[key])

    def autoencoder_config(self, input_dim: int) -> AutoencoderConfig:
        section = dict(self.autoencoder)
        if "hidden" in section:
            section["hidden"] = tuple(section["hidden"])
        return AutoencoderConfig(input_dim=input_dim, seed=self.seed, **section)

    def flow_kwargs(self) -> dict:
        section = dict(self.flow)
        section.pop("family", None)
        if "log_scale_clamp" in section:
            section["clamp"] = section.pop("log_scale_clamp")
        return section

    @property
    def flow_family(self) -> str:
        return self.flow.get("family", "maf")

    def train_config(self, checkpoint_path: str | None = None) -> TrainConfig:
        return TrainConfig(seed=self.seed, checkpoint_path=checkpoint_path, **self.train)

    def prior_mode(self) -> str:
        mode = self.tasks.get("prior", "empirical")
        if mode not in ("empirical", "uniform"):
            raise ConfigError(f"tasks.prior must be 'empirical' or 'uniform', got {mode!r}")
        return mode


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file; unknown keys are rejected and
    referenced dataset files must exist."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _require_known(raw, _TOP_KEYS, f"{path} top level")
    for key, allowed in (("dataset", _DATASET_KEYS), ("autoencoder", _AUTOENCODER_KEYS),
                         ("flow", _FLOW_KEYS), ("train", _TRAIN_KEYS),
                         ("paths", _PATH_KEYS), ("tasks", _TASK_KEYS)):
        section = raw.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{path}: {key!r} must be an object")
        _require_known(section, allowed, f"{path} [{key}]")
    cfg = ExperimentConfig(
        seed=int(raw.get("seed", 0)),
        dataset=raw.get("dataset", {}),
        autoencoder=raw.get("autoencoder", {}),
        flow=raw.get("flow", {}),
        train=raw.get("train", {}),
        paths=raw.get("paths", {}),
        tasks=raw.get("tasks", {}),
        base_dir=os.path.dirname(os.path.abspath(path)),
    )
    for key in ("objects", "labels", "attributes"):
        if key in cfg.dataset:
            target = cfg.resolve(cfg.dataset[key])
            if not os.path.exists(target):
                raise ConfigError(f"{path}: dataset.{key} refers to a missing file: {target}")
    return cfg
