"""Experiment configuration: a versioned YAML schema with strict key checking,
plus builders turning a parsed config into a model and trainer settings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .model import FactoredCMDP
from .envs import (SyntheticLineSpec, WirelessGridSpec, synthetic_line,
                   wireless_grid)
from .utilities import GeneralUtility, ENTROPY, L2_ACTION, CONSTRAINT, OBJECTIVE
from .critic import TDConfig, default_td_config
from .primal_dual import TrainConfig, StepSizes

SCHEMA_VERSION = 1

ENV_REWARD = "env_reward"


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "schema_version": int,
    "env": dict,
    "gamma": float,
    "kappa": int,
    "iterations": int,
    "horizon": int,
    "batch_size": int,
    "eta_theta": float,
    "eta_mu": float,
    "eta_mu_schedule": str,
    "mu_bar": float,
    "theta_bar": float,
    "objective": dict,
    "constraint": dict,
    "td": dict,
    "seed": int,
    "oracle_every": int,
    "out": str,
}
_REQUIRED = {"schema_version", "env", "gamma", "kappa", "iterations",
             "horizon", "batch_size", "eta_theta", "eta_mu", "objective",
             "constraint", "seed"}
_DEFAULTS = {
    "eta_mu_schedule": "constant",
    "mu_bar": 100.0,
    "theta_bar": 50.0,
    "td": None,
    "oracle_every": 0,
    "out": None,
}

_ENV_KEYS = {
    "synthetic_line": {"n": int, "reward_head": float, "reward_rest": float},
    "wireless_grid": {"side": int, "deadline": int, "seed": int,
                      "p": list, "q": list},
}
_UTILITY_KEYS = {"kind": str, "threshold": float}
_TD_KEYS = {"steps": int, "h": float, "k1": float}


def _check_keys(mapping, allowed, where):
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _coerce(value, typ, key, where):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if typ is list and isinstance(value, (list, tuple)):
        value = list(value)
    if not isinstance(value, typ) or isinstance(value, bool):
        raise ConfigError(
            f"field {key!r} in {where} must be {typ.__name__}, "
            f"got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict  # normalized mapping; the canonical serialized form

    def __getitem__(self, key):
        return self.raw[key]

    def replace(self, **updates) -> "ExperimentConfig":
        merged = dict(self.raw)
        for key, value in updates.items():
            merged[key] = value
        return parse_config_dict(merged)

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def out(self):
        return self.raw.get("out")


def parse_config_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(data, _TOP_KEYS, "config root")
    missing = _REQUIRED - set(data)
    if missing:
        raise ConfigError(f"missing required fields: {sorted(missing)}")
    norm = {}
    for key, value in data.items():
        if value is None and key in _DEFAULTS:
            continue
        norm[key] = _coerce(value, _TOP_KEYS[key], key, "config root")
    for key, dflt in _DEFAULTS.items():
        if key not in norm and dflt is not None:
            norm[key] = dflt

    if norm["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {norm['schema_version']} is not supported "
            f"(expected {SCHEMA_VERSION})")
    if not (0.0 <= norm["gamma"] < 1.0):
        raise ConfigError(f"gamma must be in [0, 1), got {norm['gamma']}")
    for key in ("kappa", "oracle_every"):
        if norm.get(key, 0) < 0:
            raise ConfigError(f"{key} must be nonnegative")
    for key in ("iterations", "horizon", "batch_size"):
        if norm[key] < 0 or (key != "iterations" and norm[key] < 1):
            raise ConfigError(f"{key} must be positive")
    for key in ("eta_theta", "mu_bar", "theta_bar"):
        if norm[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if norm["eta_mu"] < 0:
        raise ConfigError("eta_mu must be nonnegative")
    if norm["eta_mu_schedule"] not in ("constant", "t_one_third"):
        raise ConfigError(
            f"eta_mu_schedule must be 'constant' or 't_one_third', "
            f"got {norm['eta_mu_schedule']!r}")

    env = dict(norm["env"])
    name = env.pop("name", None)
    if name not in _ENV_KEYS:
        raise ConfigError(
            f"env.name must be one of {sorted(_ENV_KEYS)}, got {name!r}")
    _check_keys(env, _ENV_KEYS[name], f"env ({name})")
    for key, value in env.items():
        env[key] = _coerce(value, _ENV_KEYS[name][key], key, "env")
    if name == "synthetic_line" and "n" not in env:
        raise ConfigError("env.n is required for synthetic_line")
    if name == "wireless_grid":
        for key in ("side", "deadline"):
            if key not in env:
                raise ConfigError(f"env.{key} is required for wireless_grid")
    norm["env"] = {"name": name, **env}

    for block_name in ("objective", "constraint"):
        block = dict(norm[block_name])
        _check_keys(block, _UTILITY_KEYS, block_name)
        kind = block.get("kind")
        allowed = ((ENV_REWARD, ENTROPY, L2_ACTION)
                   if block_name == "objective" else (ENTROPY, L2_ACTION))
        if kind not in allowed:
            raise ConfigError(
                f"{block_name}.kind must be one of {allowed}, got {kind!r}")
        if "threshold" in block:
            block["threshold"] = _coerce(block["threshold"], float,
                                         "threshold", block_name)
        if block_name == "constraint" and "threshold" not in block:
            raise ConfigError("constraint.threshold is required")
        if block_name == "objective" and "threshold" in block:
            raise ConfigError("objective must not carry a threshold")
        norm[block_name] = block

    if "td" in norm:
        td = dict(norm["td"])
        _check_keys(td, _TD_KEYS, "td")
        for key, value in td.items():
            td[key] = _coerce(value, _TD_KEYS[key], key, "td")
        if ("h" in td) != ("k1" in td):
            raise ConfigError("td.h and td.k1 must be given together")
        norm["td"] = td

    return ExperimentConfig(raw=norm)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=True, default_flow_style=False)


def build_env(cfg: ExperimentConfig) -> FactoredCMDP:
    env = dict(cfg["env"])
    name = env.pop("name")
    gamma = cfg["gamma"]
    if name == "synthetic_line":
        return synthetic_line(SyntheticLineSpec(gamma=gamma, **env))
    if "p" in env:
        env["p"] = tuple(env["p"])
    if "q" in env:
        env["q"] = tuple(env["q"])
    return wireless_grid(WirelessGridSpec(gamma=gamma, **env))


def build_utilities(cfg: ExperimentConfig, cmdp: FactoredCMDP):
    """Per-agent objective list (None for env reward) and constraint list."""
    n = cmdp.n_agents
    obj = cfg["objective"]
    if obj["kind"] == ENV_REWARD:
        objectives = None
    else:
        objectives = [GeneralUtility(kind=obj["kind"], role=OBJECTIVE,
                                     gamma=cmdp.gamma) for _ in range(n)]
    con = cfg["constraint"]
    constraints = [GeneralUtility(kind=con["kind"], role=CONSTRAINT,
                                  threshold=con["threshold"],
                                  gamma=cmdp.gamma) for _ in range(n)]
    return objectives, constraints


def build_train_config(cfg: ExperimentConfig) -> TrainConfig:
    td = None
    if "td" in cfg.raw:
        block = cfg["td"]
        if "h" in block:
            td = TDConfig(steps=block.get("steps", 500), h=block["h"],
                          k1=block["k1"])
        else:
            td = default_td_config(cfg["gamma"], steps=block.get("steps", 500))
    return TrainConfig(
        kappa=cfg["kappa"], iterations=cfg["iterations"],
        horizon=cfg["horizon"], batch_size=cfg["batch_size"],
        steps=StepSizes(eta_theta=cfg["eta_theta"], eta_mu=cfg["eta_mu"],
                        schedule=cfg["eta_mu_schedule"]),
        mu_bar=cfg["mu_bar"], theta_bar=cfg["theta_bar"], td=td,
        oracle_every=cfg["oracle_every"])


def derived_seed(base_seed: int, index: int) -> int:
    """Stable per-run seed for sweeps, split from the base seed."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(4, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
