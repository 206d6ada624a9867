import json
import math
import os
import pathlib

import pytest

import uavcmdp

CONFIG_DIR = pathlib.Path(os.environ.get("UAVCMDP_TEST_CONFIG_DIR", pathlib.Path(__file__).parents[2] / "configs"))

TINY = {
    "grid_world": {
        "area_side_m": 100,
        "resolution_m": 10,
        "rows": [".........."] * 4 + ["######...."] * 2 + [".........."] * 4,
    },
    "episode": {"goal": [15, 85, 100], "goal_halfwidth_m": 10, "d_th": 1, "max_steps": 40},
    "episodes": 20,
    "eval_every": 10,
    "eval_episodes": 10,
    "lyapunov": {"q_hidden": [16, 16], "policy_hidden": [16, 16], "pretrain_steps": 20, "batch_size": 8},
}


def test_formulas():
    assert uavcmdp.element_gain_db(90.0, 0.0) == pytest.approx(8.0)
    assert uavcmdp.q_t(3, 1.0, 10) == pytest.approx(8.0)
    assert uavcmdp.path_loss_db("mmwave", 100.0, True, 100.0) == pytest.approx(-10 * math.log10(5e-4) + 40.0)


def test_infeasible_lp_returns_the_baseline():
    pi = [0.25, 0.25, 0.25, 0.25]
    assert uavcmdp.solve_policy_lp([1, 1, 1, 1], [1, 2, 3, 4], pi, -5.0) == pi


def test_scenario_generation_is_seeded():
    cfg = {"env_class": "urban", "seed": 4}
    a = uavcmdp.generate_scenario(cfg)
    assert a == uavcmdp.generate_scenario(json.dumps(cfg))
    assert len(a["base_stations"]) == 7
    assert a["buildings"]


def test_env_steps_and_rejects_bad_actions():
    env = uavcmdp.Env(TINY, seed=3)
    s = env.reset()
    assert not s["done"]
    assert len(env.features()) > 0
    t = env.step(0)
    assert t["cost"] > 0
    assert t["constraint_cost"] in (0, 1)
    with pytest.raises(ValueError):
        env.step(7)


def test_bad_config_raises_value_error():
    bad = dict(TINY, agent="ppo")
    with pytest.raises(ValueError):
        uavcmdp.Env(bad)


def test_training_is_reproducible(tmp_path):
    a = uavcmdp.train(TINY, 2, tmp_path / "a")
    b = uavcmdp.train(TINY, 2, tmp_path / "b")
    assert a == b
    assert 0.0 <= a["mission_success_rate"] <= 1.0
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    ckpt = (tmp_path / "a" / "checkpoint.json").read_text()
    assert uavcmdp.evaluate(ckpt, TINY, 2)["mission_success_rate"] == a["mission_success_rate"]


def test_shipped_configs_parse():
    paths = sorted(CONFIG_DIR.glob("*.json"))
    assert paths
    for path in paths:
        full = uavcmdp.experiment_config(path.read_text())
        assert full["episodes"] >= 0
        if "grid_world" in json.loads(path.read_text()):
            uavcmdp.Env(full)
    with pytest.raises(ValueError):
        uavcmdp.experiment_config({"episodes": -1})
