"""Experiment configuration file: one JSON document covering every module.

A config file may specify any subset of the known keys; missing keys take
the documented defaults below, unknown keys are rejected outright so typos
fail fast instead of silently running a different experiment.
"""

from __future__ import annotations

import copy
import json

from .geometry import CameraIntrinsics, CylinderModel
from .network import DEFAULT_OUTPUT_BIAS, ModelConfig
from .renderer import Bounds, SceneGeometry
from .training import TrainConfig

CONFIG_SCHEMA = 1

DEFAULT_CONFIG = {
    "schema": CONFIG_SCHEMA,
    "scene": {
        "r0": 2.0,
        "h0": 3.5,
        "visible_length": 20.0,
        "visible_center_y": -7.25,
        "wall_x": -6.0,
    },
    "bounds": Bounds().to_dict(),
    "intrinsics": {
        "horizontal_fov": 61.6,
        "aspect": 16.0 / 9.0,
        "resolution": [128, 72],
    },
    "dataset": {
        "count": 2200,
        "split": 2000,
        "seed": 7,
        "jobs": 1,
    },
    "model": {
        "input_size": 64,
        "in_channels": 3,
        "conv_channels": [16, 32, 64, 64],
        "kernel_size": 3,
        "dense_widths": [128],
        "output_bias": list(DEFAULT_OUTPUT_BIAS),
    },
    "training": {
        "loss": "icsc",
        "beta": 500.0,
        "epochs": 200,
        "batch_size": 25,
        "learning_rate": 1e-4,
        "seed": 0,
        "max_steps": None,
        "checkpoint_every": None,
    },
    "evaluation": {
        "batch_size": 128,
    },
}


def _merge_strict(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ValueError(f"unknown config key: {where!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_strict(defaults[key], value, where)
        else:
            out[key] = value
    return out


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def dump_defaults() -> str:
    return json.dumps(DEFAULT_CONFIG, indent=2)


def load_config(path: str | None) -> dict:
    """Full config dict: file contents merged over defaults, keys validated."""
    if path is None:
        return default_config()
    with open(path) as fh:
        user = json.load(fh)
    if not isinstance(user, dict):
        raise ValueError(f"{path}: config root must be an object")
    schema = user.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ValueError(f"{path}: unsupported config schema {schema}")
    return _merge_strict(DEFAULT_CONFIG, user)


def cylinder_from_config(cfg: dict) -> CylinderModel:
    return CylinderModel(r0=cfg["scene"]["r0"], h0=cfg["scene"]["h0"])


def scene_from_config(cfg: dict) -> SceneGeometry:
    s = cfg["scene"]
    return SceneGeometry(cylinder=cylinder_from_config(cfg),
                         visible_length=s["visible_length"],
                         visible_center_y=s["visible_center_y"],
                         wall_x=s["wall_x"])


def bounds_from_config(cfg: dict) -> Bounds:
    return Bounds.from_dict(cfg["bounds"])


def intrinsics_from_config(cfg: dict) -> CameraIntrinsics:
    i = cfg["intrinsics"]
    return CameraIntrinsics(horizontal_fov=i["horizontal_fov"], aspect=i["aspect"],
                            resolution=tuple(i["resolution"]))


def model_from_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict(cfg["model"])


def train_from_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["training"])
