"""Experiment configuration: YAML file + CLI overrides -> effective config.

The effective config is a plain nested dict, hashed into every artifact
it produces and dumped alongside as ``effective_config.yaml``.
"""

import copy
import os

import yaml

from .labels import LabelMap
from .pipeline import TrainConfig
from .reports import config_hash
from .trigger import TriggerConfig

DEFAULT_CONFIG = {
    "dataset_root": None,
    "output_dir": None,
    "label_map": {"mode": "all_to_all", "fixed_target": None},
    "poison": {"rho": 0.1, "seed": 7},
    "trigger": {
        "gamma": 10.0,
        "max_iters": 200,
        "step_cls": 0.05,
        "step_color": 0.005,
        "quality_gate_e00": None,
        "seed": 7,
        "gamma_scale": 0.02,
    },
    "train_surrogate": {
        "model_id": "surrogate_cnn_narrow",
        "epochs": 30,
        "batch_size": 128,
        "weight_decay": 5e-4,
        "lr_max": 0.01,
        "warmup_epochs": 5,
        "momentum": 0.9,
        "seed": 7,
        "augment": True,
    },
    "train_victim": {
        "model_id": "victim_small_resnet",
        "epochs": 30,
        "batch_size": 128,
        "weight_decay": 5e-4,
        "lr_max": 0.01,
        "warmup_epochs": 5,
        "momentum": 0.9,
        "seed": 7,
        # the desk benchmark is synthetic sign-like imagery; random crops
        # and flips do not reflect its statistics, so victims train
        # without augmentation
        "augment": False,
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _deep_update(base: dict, override: dict) -> dict:
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Merge defaults <- config file <- CLI overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            file_cfg = yaml.safe_load(fh) or {}
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file is not a mapping: {path}")
        for key in file_cfg:
            if key not in cfg:
                raise ConfigError(f"unknown config key: {key}")
        _deep_update(cfg, file_cfg)
    if overrides:
        _deep_update(cfg, overrides)
    return cfg


def effective_hash(cfg: dict) -> str:
    return config_hash(cfg)


def label_map_from(cfg: dict, num_classes: int) -> LabelMap:
    lm = cfg["label_map"]
    mode = {"all2all": "all_to_all", "all2one": "all_to_one"}.get(
        lm["mode"], lm["mode"]
    )
    return LabelMap(
        mode=mode, num_classes=num_classes, fixed_target=lm.get("fixed_target")
    )


def trigger_config_from(cfg: dict) -> TriggerConfig:
    return TriggerConfig(**cfg["trigger"])


def train_config_from(cfg: dict, which: str) -> TrainConfig:
    return TrainConfig(**cfg[which])


def dump_effective(cfg: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "effective_config.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(
            {"config_hash": effective_hash(cfg), **cfg}, fh, sort_keys=True
        )
    return path
