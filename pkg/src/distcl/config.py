"""Experiment configuration: JSON files with one section per concern.

Every random stream is derived from the mandatory top-level ``seed``:
history ``seed``, network ``seed + 1``, exogenous scenarios ``seed + 2`` and
demand shocks ``seed + 3``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

DEFAULTS = {
    "name": "experiment",
    "generator": {"days": 120, "start": "2017-07-01", "level": 1000.0, "noise_sigma": 0.08,
                  "eta_r": 0.2, "price_mean": 14.0, "price_spread": [0.5, 1.5],
                  "weekend_factor": 0.92, "temp_effect": 0.012},
    "network": {"hidden_layers": 1, "neurons": 8, "epochs": 300, "learning_rate": 1e-3,
                "batch_size": 64, "val_fraction": 0.2},
    "scenarios": {"count": 30, "price_noise": 2.0, "price_ar": 0.7, "solar_noise": 0.25,
                  "solar_share": 0.5},
    "vpp": {"hours": [0, 4, 8, 12, 16, 20], "lambda_bal": 100.0, "eta_ds": 0.9, "eta_ch": 0.9,
            "battery_ratio": 1.0, "ramp_ratio": 1.0 / 3.0, "init_ratio": 8.0 / 15.0,
            "sigma_dev": 0.25, "grid_points": 9, "heuristic_a_price": 10.0,
            "shock_mode": "shared", "eliminate_stable": True, "context_box": "point",
            "context_margin": 0.1},
    "solver": {"backend": "native", "gap_tol": 1e-6, "node_limit": 1_000_000},
    "solve": {"mode": "dcl"},
    "compare": {"modes": ["dcl", "heuristic_a", "heuristic_b", "deterministic_cl"],
                "alpha": 0.1},
    "paths": {"dataset": None, "weights": None},
}

ABSOLUTE_BATTERY = ("b_max", "b_init", "r_ds", "r_ch")


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base and not (where == "vpp." and k in ABSOLUTE_BATTERY):
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base.get(k), dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    seed: int
    data: dict = field(default_factory=dict)
    source: Path | None = None

    def section(self, name: str) -> dict:
        return self.data[name]

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seeds(self) -> dict[str, int]:
        s = self.seed
        return {"history": s, "network": s + 1, "scenarios": s + 2, "shocks": s + 3}

    def resolve_path(self, value) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def from_dict(raw: dict, source: Path | None = None, seed: int | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    s = raw.pop("seed", None)
    if seed is not None:
        s = seed
    if s is None:
        raise ConfigError("config needs an integer 'seed' (no clock-based default)")
    if not isinstance(s, int) or isinstance(s, bool):
        raise ConfigError(f"seed must be an integer, got {s!r}")
    cfg = ExperimentConfig(s, _merge(DEFAULTS, raw), source)
    for key in ("dataset", "weights"):
        p = cfg.resolve_path(cfg.data["paths"].get(key))
        if p is not None and not p.exists():
            raise ConfigError(f"paths.{key} does not exist: {p}")
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        builtin = resources.files("distcl") / "configs" / f"{path.name}"
        if not str(path.name).endswith(".json"):
            builtin = resources.files("distcl") / "configs" / f"{path.name}.json"
        if builtin.is_file():
            return from_dict(json.loads(builtin.read_text()), None, seed)
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(raw, path, seed)
