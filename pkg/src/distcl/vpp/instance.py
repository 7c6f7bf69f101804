"""Turn an experiment config into a ready-to-solve VPP instance."""
from __future__ import annotations

import numpy as np

from ..config import ConfigError, ExperimentConfig
from ..nn import Dataset, Network, TrainConfig, TrainingReport, load_dataset, load_network, train
from .data import (FEATURES, ExogenousProfiles, GeneratorConfig, decision_context,
                   generate_exogenous_scenarios, generate_training_data, price_profile,
                   solar_bell)
from .model import VppInstance, VppParams, feature_box


def generator_config(cfg: ExperimentConfig) -> GeneratorConfig:
    g = dict(cfg.section("generator"))
    g["price_spread"] = tuple(g["price_spread"])
    try:
        return GeneratorConfig(seed=cfg.seeds["history"], **g)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"generator: {exc}") from None


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    try:
        return TrainConfig(seed=cfg.seeds["network"], **cfg.section("network"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"network: {exc}") from None


def solar_peak(gen: GeneratorConfig, share: float) -> float:
    """Peak output giving a daily solar energy of ``share`` times the daily demand."""
    return share * gen.mean_daily_demand() / float(solar_bell(np.arange(24), 1.0).sum())


def vpp_params(cfg: ExperimentConfig) -> VppParams:
    v = dict(cfg.section("vpp"))
    gen = generator_config(cfg)
    peak = solar_peak(gen, cfg.section("scenarios")["solar_share"])
    b_max = v.pop("b_max", v["battery_ratio"] * peak)
    ramp = v["ramp_ratio"] * b_max
    r_ds = v.pop("r_ds", ramp)
    r_ch = v.pop("r_ch", ramp)
    b_init = v.pop("b_init", v["init_ratio"] * b_max)
    for k in ("battery_ratio", "ramp_ratio", "init_ratio", "context_margin",
              "context_box"):
        v.pop(k)
    try:
        return VppParams(r_ds=r_ds, r_ch=r_ch, b_max=b_max, b_init=b_init, **v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"vpp: {exc}") from None


def training_data(cfg: ExperimentConfig) -> Dataset:
    path = cfg.resolve_path(cfg.section("paths").get("dataset"))
    if path is not None:
        return load_dataset(path)
    return generate_training_data(generator_config(cfg))


def network(cfg: ExperimentConfig, data: Dataset | None = None
            ) -> tuple[Network, TrainingReport | None]:
    """Load the configured weights, or train on ``data`` (generated if omitted)."""
    path = cfg.resolve_path(cfg.section("paths").get("weights"))
    if path is not None:
        return load_network(path), None
    return train(data if data is not None else training_data(cfg), train_config(cfg))


def scenarios(cfg: ExperimentConfig, params: VppParams | None = None):
    params = params or vpp_params(cfg)
    s = cfg.section("scenarios")
    gen = generator_config(cfg)
    prof = ExogenousProfiles(list(params.hours), price_profile(gen.price_mean, params.hours),
                             solar_peak(gen, s["solar_share"]), s["price_noise"],
                             s["price_ar"], s["solar_noise"])
    shocks = params.T if params.shock_mode == "per_period" else 1
    try:
        return generate_exogenous_scenarios(prof, s["count"], cfg.seeds["scenarios"], shocks,
                                            cfg.seeds["shocks"])
    except ValueError as exc:
        raise ConfigError(f"scenarios: {exc}") from None


def build_instance(cfg: ExperimentConfig, net: Network | None = None,
                   data: Dataset | None = None) -> VppInstance:
    """Instance for the decision day.

    Context features enter as fixed variables, so by default their embedding
    box is the point itself; ``vpp.context_box = "data"`` uses the data range
    widened by ``vpp.context_margin`` instead.
    """
    params = vpp_params(cfg)
    data = data if data is not None else training_data(cfg)
    if net is None:
        net, _ = network(cfg, data)
    ctx = decision_context(generator_config(cfg), params.hours)
    v = cfg.section("vpp")
    if v["context_box"] == "point":
        box = None
    elif v["context_box"] == "data":
        box = feature_box(data.features, v["context_margin"])
    else:
        raise ConfigError(f"vpp.context_box must be 'point' or 'data', got {v['context_box']!r}")
    return VppInstance(params, net, ctx, scenarios(cfg, params), list(FEATURES),
                       context_box=box)
