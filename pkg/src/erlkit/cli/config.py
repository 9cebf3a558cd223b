"""Experiment configuration: dotted keys, documented defaults, validation.

Values are resolved in order: explicit setting, then the per-workflow default,
then the global default. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
import sys
from collections.abc import Mapping
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

WORKFLOWS = ("es", "ppo", "td3", "erl", "cemrl", "pbt", "pbt-cso", "synthetic")

# Keys whose values are tables rather than scalars.
TABLE_KEYS = ("pbt.search",)

# Default PBT search space for a PPO inner workflow: {name: (low, high, scale)}.
PPO_SEARCH = {
    "w_actor": {"low": 0.01, "high": 10.0, "scale": "log"},
    "w_critic": {"low": 0.01, "high": 10.0, "scale": "log"},
    "w_entropy": {"low": -1.0, "high": -1e-5, "scale": "log"},
    "gamma": {"low": 0.86466, "high": 0.99999, "scale": "log1m"},
    "gae_lambda": {"low": 0.63212, "high": 0.99999, "scale": "log1m"},
    "clip_eps": {"low": 0.01, "high": 0.5, "scale": "log"},
}
SYNTHETIC_SEARCH = {"lr": {"low": 1e-5, "high": 1.0, "scale": "log"}}

# key: (default, description)
DEFAULTS: dict[str, tuple[object, str]] = {
    "workflow": ("es", "pipeline id: " + ", ".join(WORKFLOWS)),
    "seed": (0, "root seed; (config, seed) determines every output byte"),
    "env.id": ("pendulum", "pendulum or cartpole"),
    "env.fixed_horizon": (False, "ignore termination so every episode runs to the step limit"),
    "env.max_episode_steps": (0, "episode step limit; 0 keeps the environment default (200 / 500)"),
    "net.hidden": ([16, 16], "hidden layer widths, list or comma string such as '256,256'"),
    "net.layer_norm": (False, "layer normalization after each hidden linear layer"),
    "exec.workers": (0, "parallel workers; 0 = available cores"),
    "budget.iterations": (0, "stop after this many iterations (0 = unbounded)"),
    "budget.env_steps": (0, "stop once this many environment steps were taken (0 = unbounded)"),
    "budget.episodes": (0, "stop once this many episodes were sampled (0 = unbounded)"),
    "eval.every": (10, "evaluate every this many iterations (0 = never)"),
    "eval.episodes": (128, "evaluation episodes per evaluation event"),
    "eval.target_return": (None, "stop early once an evaluation mean reaches this value"),
    "checkpoint.every": (0, "extra checkpoints every this many iterations (0 = final only)"),
    "output.dir": ("runs/default", "output directory; ERLKIT_OUT and --out override it"),
    # evolutionary layer
    "ec.algo": ("openes", "openes, ars, ves, cmaes or cem"),
    "ec.pop_size": (128, "candidates per iteration"),
    "ec.mirrored": (True, "antithetic noise pairs for openes/ves"),
    "ec.noise_table": (False, "draw openes noise from a pre-built shared table"),
    "ec.noise_table_size": (1 << 22, "entries in the pre-built noise table"),
    "ec.openes.sigma": (0.02, "OpenES noise std"),
    "ec.openes.lr": (0.01, "OpenES Adam learning rate"),
    "ec.openes.weight_decay": (0.005, "OpenES decoupled weight decay"),
    "ec.ars.sigma": (0.03, "ARS noise std"),
    "ec.ars.lr": (0.02, "ARS SGD step size"),
    "ec.ars.elites": (16, "ARS top directions used per update"),
    "ec.ves.sigma": (0.02, "vanilla ES noise std"),
    "ec.ves.elites": (16, "vanilla ES recombination parents"),
    "ec.cmaes.sigma0": (0.1, "CMA-ES initial step size"),
    "ec.cmaes.elites": (64, "CMA-ES recombination parents"),
    "ec.cmaes.max_dim": (4096, "largest dimension CMA-ES accepts (dense covariance)"),
    "ec.cem.elites": (5, "CEM elites"),
    "ec.cem.init_var": (1e-3, "CEM initial per-coordinate variance"),
    "ec.cem.floor_start": (1e-3, "CEM variance floor at the first iteration"),
    "ec.cem.floor_end": (1e-5, "CEM variance floor at the last planned iteration"),
    "es.fitness_episodes": (1, "episodes per candidate fitness"),
    "es.common_starts": (True, "evaluate all candidates of an iteration from the same episode starts"),
    "es.obs_norm": ("auto", "vbn, rs, none or auto (rs for ars, vbn otherwise)"),
    "es.vbn_steps": (10000, "random timesteps used to fit VBN statistics"),
    # PPO
    "ppo.num_envs": (4, "parallel environment lanes"),
    "ppo.steps_per_iter": (2048, "timesteps collected per iteration, across all lanes"),
    "ppo.epochs": (4, "passes over each iteration's batch"),
    "ppo.minibatch": (256, "minibatch size"),
    "ppo.lr": (3e-4, "Adam learning rate"),
    "ppo.max_grad_norm": (10.0, "global gradient-norm clip"),
    "ppo.w_actor": (1.0, "clipped surrogate loss weight"),
    "ppo.w_critic": (0.5, "value loss weight"),
    "ppo.w_entropy": (-0.01, "entropy loss weight"),
    "ppo.gamma": (0.99, "discount"),
    "ppo.gae_lambda": (0.95, "GAE lambda"),
    "ppo.clip_eps": (0.2, "ratio clip"),
    # TD3 (also the RL half of erl/cemrl)
    "td3.gamma": (0.99, "discount"),
    "td3.tau": (0.005, "target soft-update rate"),
    "td3.expl_noise": (0.1, "Gaussian exploration noise std on actions"),
    "td3.policy_noise": (0.2, "target policy smoothing noise std"),
    "td3.noise_clip": (0.5, "target policy smoothing clip"),
    "td3.batch_size": (256, "minibatch size"),
    "td3.lr": (3e-4, "Adam learning rate (actor and critics)"),
    "td3.actor_update_interval": (2, "critic steps per actor step"),
    "td3.buffer_size": (1_000_000, "replay capacity"),
    "td3.num_envs": (1, "parallel environment lanes (standalone TD3)"),
    "td3.steps_per_iter": (1, "timesteps per lane per iteration (standalone TD3)"),
    "td3.random_timesteps": (10000, "uniform-random timesteps before learning (standalone TD3)"),
    # ERL
    "erl.pop_size": (10, "population size"),
    "erl.fitness_episodes": (1, "episodes per member fitness"),
    "erl.rl_episodes": (1, "exploration episodes of the RL actor per iteration"),
    "erl.warmup_iters": (10, "initial iterations without RL updates"),
    "erl.random_timesteps": (0, "uniform-random timesteps pre-filled into the buffer"),
    "erl.update_mode": ("aligned", "aligned (updates = sampled timesteps) or fixed"),
    "erl.fixed_updates": (4096, "RL updates per iteration in fixed mode"),
    "erl.elites": (1, "members copied unchanged each generation"),
    "erl.tournament_k": (3, "tournament size"),
    "erl.mutation_std": (0.1, "Gaussian mutation std"),
    "erl.mutation_prob": (0.1, "per-coordinate mutation probability"),
    "erl.sync_period": (1, "generations between RL actor injections"),
    # CEM-RL
    "cemrl.pop_size": (10, "population size"),
    "cemrl.elites": (5, "CEM elites"),
    "cemrl.rl_fraction": (0.5, "fraction of candidates given RL updates"),
    "cemrl.fitness_episodes": (1, "episodes per candidate fitness"),
    "cemrl.init_var": (1e-3, "CEM initial per-coordinate variance"),
    "cemrl.floor_start": (1e-3, "CEM variance floor at the first iteration"),
    "cemrl.floor_end": (1e-5, "CEM variance floor at the last planned iteration"),
    "cemrl.planned_iters": (0, "iterations the floor schedule spans; 0 derives it from the budget"),
    "cemrl.random_timesteps": (25600, "uniform-random timesteps pre-filled into the buffer"),
    "cemrl.warmup_iters": (10, "initial iterations without RL updates"),
    "cemrl.update_mode": ("aligned", "aligned (updates = sampled timesteps) or fixed"),
    "cemrl.fixed_updates": (4096, "RL updates per iteration in fixed mode"),
    # PBT
    "pbt.inner": ("ppo", "inner workflow id"),
    "pbt.pop_size": (128, "population size"),
    "pbt.warmup_steps": (256, "inner steps before the first exploit"),
    "pbt.steps_per_iter": (64, "inner steps per meta-iteration"),
    "pbt.perturb": (0.2, "explore factor: values scale by 1 +/- perturb"),
    "pbt.selection_ratio": (0.2, "fraction replaced / fraction donating"),
    "pbt.meta_episodes": (16, "evaluation episodes for the meta-objective"),
    "pbt.cso_per_coordinate": (True, "draw CSO r1, r2 per hyperparameter (else per pair)"),
    "pbt.search": (None, "table of {low, high, scale} per hyperparameter; scale is linear, log or log1m"),
    # synthetic inner workflow
    "synthetic.optimum": (0.01, "hyperparameter value maximizing the synthetic meta-objective"),
    "synthetic.noise": (0.0, "std of Gaussian noise added to the synthetic meta-objective"),
}

WORKFLOW_DEFAULTS: dict[str, dict[str, object]] = {
    "es": {"budget.iterations": 2000},
    "ppo": {"env.id": "cartpole", "net.hidden": [64, 64], "budget.env_steps": 1_000_000},
    "td3": {"net.hidden": [256, 256], "budget.env_steps": 100_000, "eval.every": 1000},
    "erl": {"net.hidden": [256, 256], "net.layer_norm": True, "budget.episodes": 20000,
            "td3.actor_update_interval": 1},
    "cemrl": {"net.hidden": [256, 256], "net.layer_norm": True, "budget.episodes": 20000,
              "td3.actor_update_interval": 1},
    "pbt": {"net.hidden": [256, 256], "budget.iterations": 100, "eval.every": 1},
    "pbt-cso": {"net.hidden": [256, 256], "budget.iterations": 100, "eval.every": 1},
    "synthetic": {"budget.iterations": 100},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists one message per offending key."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def _flatten(table: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping) and key not in TABLE_KEYS:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text: str):
    """Interpret an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_hidden(value) -> tuple[int, ...]:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        return tuple(int(p) for p in parts)
    return tuple(int(v) for v in value)


def _check(key: str, value, default) -> str | None:
    if key == "net.hidden":
        try:
            widths = parse_hidden(value)
        except (TypeError, ValueError):
            return f"{key}: expected a list of positive integers, got {value!r}"
        if any(w < 1 for w in widths):
            return f"{key}: widths must be positive"
        return None
    if key == "pbt.search":
        if not isinstance(value, Mapping):
            return f"{key}: expected a table of {{low, high, scale}} entries"
        for name, entry in value.items():
            if not isinstance(entry, Mapping) or not {"low", "high"} <= set(entry):
                return f"{key}.{name}: needs low and high"
            if set(entry) - {"low", "high", "scale"}:
                return f"{key}.{name}: unknown fields {sorted(set(entry) - {'low', 'high', 'scale'})}"
            if entry.get("scale", "linear") not in ("linear", "log", "log1m"):
                return f"{key}.{name}: scale must be linear, log or log1m"
            if not float(entry["low"]) <= float(entry["high"]):
                return f"{key}.{name}: low must not exceed high"
        return None
    if default is None:
        if value is None or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return None
        return f"{key}: expected a number, got {value!r}"
    if isinstance(default, bool):
        return None if isinstance(value, bool) else f"{key}: expected true/false, got {value!r}"
    if isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        return None if ok else f"{key}: expected an integer, got {value!r}"
    if isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        return None if ok else f"{key}: expected a number, got {value!r}"
    if isinstance(default, str):
        return None if isinstance(value, str) else f"{key}: expected a string, got {value!r}"
    return None


def _default_search(values: Mapping) -> dict:
    inner = values.get("pbt.inner", DEFAULTS["pbt.inner"][0])
    return SYNTHETIC_SEARCH if inner == "synthetic" else PPO_SEARCH


def _set_nested(values: dict, key: str, raw):
    """Apply ``key=value`` where ``key`` may address inside a table key."""
    for table in TABLE_KEYS:
        if key.startswith(table + "."):
            path = key[len(table) + 1 :].split(".")
            current = values.get(table)
            if not isinstance(current, Mapping):
                current = _default_search(values)
            root = json.loads(json.dumps(current))
            node = root
            for part in path[:-1]:
                node = node.setdefault(part, {})
            node[path[-1]] = raw
            values[table] = root
            return
    values[key] = raw


class Config(Mapping):
    """Resolved, validated configuration for one experiment."""

    def __init__(self, values: Mapping | None = None, workflow: str | None = None):
        values = dict(values or {})
        errors = []
        for key, value in values.items():
            if key not in DEFAULTS:
                errors.append(f"{key}: unknown configuration key")
                continue
            msg = _check(key, value, DEFAULTS[key][0])
            if msg:
                errors.append(msg)
        wf = workflow or values.get("workflow", DEFAULTS["workflow"][0])
        if wf not in WORKFLOWS:
            errors.append(f"workflow: unknown workflow {wf!r} (choose from {', '.join(WORKFLOWS)})")
        if errors:
            raise ConfigError(errors)
        self._values = values
        self.workflow = wf

    def __getitem__(self, key):
        if key in self._values:
            return self._values[key]
        if key == "workflow":
            return self.workflow
        wf_defaults = WORKFLOW_DEFAULTS.get(self.workflow, {})
        if key in wf_defaults:
            return wf_defaults[key]
        if key in DEFAULTS:
            default = DEFAULTS[key][0]
            if key == "pbt.search" and default is None:
                return _default_search(self._values)
            return default
        raise KeyError(key)

    def __iter__(self):
        return iter(DEFAULTS)

    def __len__(self):
        return len(DEFAULTS)

    def explicit(self) -> dict:
        return dict(self._values)

    def resolved(self) -> dict:
        """Every key with its effective value (used as run provenance)."""
        return {k: self[k] for k in DEFAULTS}

    def replace(self, **updates) -> "Config":
        values = dict(self._values)
        for k, v in updates.items():
            _set_nested(values, k.replace("__", "."), v)
        return Config(values, workflow=self.workflow)

    def for_workflow(self, workflow: str) -> "Config":
        """Same explicit values, resolved against another workflow's defaults."""
        return Config(self._values, workflow=workflow)

    def hidden(self) -> tuple[int, ...]:
        return parse_hidden(self["net.hidden"])

    def target_return(self) -> float | None:
        t = self["eval.target_return"]
        return None if t is None or math.isnan(float(t)) else float(t)


def load_config(path: str | Path | None = None, overrides=()) -> Config:
    """Read a TOML file (dotted keys or nested tables) and apply ``key=value`` overrides."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = _flatten(tomllib.load(fh))
        except OSError as err:
            raise ConfigError([f"cannot read config {path}: {err.strerror}"]) from err
        except tomllib.TOMLDecodeError as err:
            raise ConfigError([f"{path}: {err}"]) from err
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected key=value"])
        key, text = item.split("=", 1)
        _set_nested(values, key.strip(), parse_value(text.strip()))
    return Config(values)
