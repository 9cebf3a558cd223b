"""Shared fixtures and small configurations for fast workflow runs."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("erlkit", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("erlkit")

# Tiny overrides that exercise every code path of each workflow in seconds.
SMALL = {
    "es": {"workflow": "es", "ec.pop_size": 16, "es.vbn_steps": 200, "eval.episodes": 4, "eval.every": 3},
    "ppo": {"workflow": "ppo", "ppo.steps_per_iter": 128, "ppo.minibatch": 64, "net.hidden": [16, 16],
            "eval.episodes": 4, "eval.every": 3},
    "td3": {"workflow": "td3", "td3.random_timesteps": 40, "td3.batch_size": 32, "td3.steps_per_iter": 4,
            "td3.num_envs": 2, "net.hidden": [16, 16], "eval.episodes": 2, "eval.every": 3},
    "erl": {"workflow": "erl", "erl.pop_size": 4, "erl.warmup_iters": 2, "erl.update_mode": "fixed",
            "erl.fixed_updates": 5, "net.hidden": [16, 16], "td3.batch_size": 32, "eval.episodes": 2,
            "eval.every": 3, "env.max_episode_steps": 20},
    "cemrl": {"workflow": "cemrl", "cemrl.pop_size": 4, "cemrl.elites": 2, "cemrl.warmup_iters": 2,
              "cemrl.random_timesteps": 100, "cemrl.update_mode": "fixed", "cemrl.fixed_updates": 5,
              "net.hidden": [16, 16], "td3.batch_size": 32, "eval.episodes": 2, "eval.every": 3,
              "env.max_episode_steps": 20},
    "pbt": {"workflow": "pbt", "pbt.pop_size": 4, "pbt.warmup_steps": 1, "pbt.steps_per_iter": 1,
            "pbt.meta_episodes": 2, "ppo.steps_per_iter": 64, "ppo.minibatch": 32, "net.hidden": [8, 8],
            "eval.episodes": 2, "eval.every": 3},
    "pbt-cso": {"workflow": "pbt-cso", "pbt.pop_size": 5, "pbt.warmup_steps": 1, "pbt.steps_per_iter": 1,
                "pbt.meta_episodes": 2, "ppo.steps_per_iter": 64, "ppo.minibatch": 32, "net.hidden": [8, 8],
                "eval.episodes": 2, "eval.every": 3},
}


def overrides(values: dict) -> list[str]:
    """``--set`` style strings for a dict of config values."""
    return [f"{k}={json.dumps(v)}" for k, v in values.items()]


@pytest.fixture
def gen():
    return np.random.default_rng(20240501)


# criterion number -> list of (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}
CRITERIA = 11


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        parts = ACCEPTANCE.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (not evaluated)")
            continue
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
