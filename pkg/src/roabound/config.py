"""Run configuration: one JSON document drives every CLI subcommand."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .net import TrainConfig
from .sim import SimConfig
from .system import StochasticSystem, system_from_dict


@dataclass
class VerifyConfig:
    budget: int = 5_000_000
    min_width_frac: float = 1e-3
    rel_tol: float = 1e-2
    zeta: float = 0.0            # 0 = auto from |LW| enclosure
    beta1_floor_frac: float = 1e-6

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("verify budget must be >= 1")
        if not 0 < self.min_width_frac < 1:
            raise ConfigError("min_width_frac must lie in (0, 1)")
        if not 0 < self.rel_tol < 1:
            raise ConfigError("rel_tol must lie in (0, 1)")


@dataclass
class RunConfig:
    system: StochasticSystem
    sim: SimConfig
    train: TrainConfig
    verify: VerifyConfig
    out: str = "out"
    seed: int = 0
    data_grid: int = 21          # per-dim value-data grid; 0 disables data term
    data_cap: int = 2000
    heatmap_resolution: int = 61
    validate_points: int = 20
    checkpoint: str = ""         # optional explicit checkpoint path
    simulate_x0: Optional[list] = None

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)


def _take(d: dict, cls, name: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{name}' must be an object")
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid '{name}' section: {err}") from err


def config_from_dict(doc: dict) -> RunConfig:
    if "system" not in doc:
        raise ConfigError("config needs a 'system' section")
    sys = system_from_dict(doc["system"])
    seed = int(doc.get("seed", 0))

    sim_doc = dict(doc.get("sim", {}))
    sim_doc.setdefault("seed", seed)
    train_doc = dict(doc.get("train", {}))
    train_doc.setdefault("seed", seed)
    if "hidden" in train_doc:
        train_doc["hidden"] = tuple(train_doc["hidden"])
    if "loss_weights" in train_doc:
        train_doc["loss_weights"] = tuple(train_doc["loss_weights"])

    cfg = RunConfig(
        system=sys,
        sim=_take(sim_doc, SimConfig, "sim"),
        train=_take(train_doc, TrainConfig, "train"),
        verify=_take(dict(doc.get("verify", {})), VerifyConfig, "verify"),
        out=str(doc.get("out", "out")),
        seed=seed,
        data_grid=int(doc.get("data_grid", 21)),
        data_cap=int(doc.get("data_cap", 2000)),
        heatmap_resolution=int(doc.get("heatmap_resolution", 61)),
        validate_points=int(doc.get("validate_points", 20)),
        checkpoint=str(doc.get("checkpoint", "")),
        simulate_x0=doc.get("simulate_x0"),
    )
    if cfg.data_grid < 0 or cfg.data_cap < 1:
        raise ConfigError("data_grid must be >= 0 and data_cap >= 1")
    if cfg.heatmap_resolution < 1 or cfg.validate_points < 1:
        raise ConfigError("heatmap_resolution and validate_points must be >= 1")
    if cfg.checkpoint and not os.path.exists(cfg.checkpoint):
        raise ConfigError(f"checkpoint file not found: {cfg.checkpoint}")
    known = {"system", "sim", "train", "verify", "out", "seed", "data_grid",
             "data_cap", "heatmap_resolution", "validate_points", "checkpoint",
             "simulate_x0"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(doc)
