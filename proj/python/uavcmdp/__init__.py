"""Connectivity-aware UAV path design under a radio-failure budget."""

import json as _json

from . import _core
from ._core import ConfigError, DivergenceError, ScenarioError, q_t, solve_policy_lp, element_gain_db, path_loss_db

__all__ = [
    "ConfigError",
    "DivergenceError",
    "ScenarioError",
    "Env",
    "element_gain_db",
    "evaluate",
    "experiment_config",
    "generate_scenario",
    "path_loss_db",
    "q_t",
    "radio_map_csv",
    "solve_policy_lp",
    "train",
]


def _dump(obj):
    return obj if isinstance(obj, str) else _json.dumps(obj)


def generate_scenario(config):
    """Buildings and base stations for a scenario config (dict or JSON text)."""
    return _json.loads(_core.generate_scenario(_dump(config)))


def experiment_config(config):
    """Validated experiment config with every default filled in."""
    return _json.loads(_core.experiment_config(_dump(config)))


def radio_map_csv(config, seed, band=""):
    return _core.build_radio_map_csv(_dump(config), seed, band)


def Env(config, seed=0, band=""):
    return _core.Env(_dump(config), seed, band)


def train(config, seed, out_dir=""):
    """Trains one seed and returns the final evaluation report."""
    return _json.loads(_core.train(_dump(config), seed, str(out_dir)))


def evaluate(checkpoint, config, seed, out_dir=""):
    return _json.loads(_core.evaluate(_dump(checkpoint), _dump(config), seed, str(out_dir)))
