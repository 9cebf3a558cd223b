"""Workflow contract: externally held state, one training iteration per ``step``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from erlkit.env import EnvSpec, make_env
from erlkit.exec import rng
from erlkit.exec.parallel import resolve_workers
from erlkit.exec.rollout import Policy, batched_rollout
from erlkit.rl.normalize import ObsNormState

EVAL_DOMAIN = 0x45564C  # separates evaluation keys from the training stream


@dataclass(frozen=True)
class WorkflowState:
    iteration: int
    key: np.ndarray
    eval_key: np.ndarray
    env_steps: int = 0
    episodes: int = 0
    rl_updates: int = 0
    data: dict = field(default_factory=dict)
    hp: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalReport:
    mean: float
    std: float
    episodes: int
    per_agent: np.ndarray | None = None


def next_keys(state: WorkflowState, n: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Advance the training key; returns (new state key, n per-purpose step keys)."""
    step_key = rng.fold_in(state.key, 1)
    return rng.fold_in(state.key, 0), [rng.fold_in(step_key, i) for i in range(n)]


def evaluate_params(
    env: EnvSpec,
    spec,
    params,
    key,
    episodes: int,
    obs_norm: ObsNormState | None = None,
    workers: int | None = 1,
) -> EvalReport:
    """Undiscounted return of deterministic policies, ``episodes`` lanes per agent.

    ``params`` may be one vector or a stack; with a stack, ``mean``/``std``
    describe the first agent and ``per_agent`` holds every agent's mean.
    """
    p = np.asarray(params, dtype=np.float64)
    stacked = p.ndim == 2
    res = batched_rollout(env, Policy(spec), p, episodes, key, episodes=episodes, obs_norm=obs_norm,
                          workers=workers)
    returns = np.asarray(res.episode_returns)
    first = returns[0]
    return EvalReport(float(first.mean()), float(first.std()), int(episodes),
                      returns.mean(axis=1) if stacked else None)


class Workflow:
    """Training pipeline. Holds configuration only; all state is external."""

    name = "base"
    tunable: tuple[str, ...] = ()

    def __init__(self, cfg):
        self.cfg = cfg
        self.workers = resolve_workers(cfg.get("exec.workers", 1))
        self.env = make_env(
            cfg.get("env.id", "pendulum"),
            fixed_horizon=bool(cfg.get("env.fixed_horizon", False)),
            max_episode_steps=int(cfg.get("env.max_episode_steps", 0)) or None,
        )
        self._build()

    @classmethod
    def build_from_config(cls, cfg) -> "Workflow":
        return cls(cfg)

    def _build(self):
        pass

    def init(self, key) -> WorkflowState:
        """Fresh state from a key (or an integer seed)."""
        key = rng.key_from_seed(key) if isinstance(key, (int, np.integer)) else rng.as_key(key)
        eval_key = rng.fold_in(key, EVAL_DOMAIN)
        state = WorkflowState(0, rng.fold_in(key, 0), eval_key)
        return self._init(state, rng.fold_in(key, 1))

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        raise NotImplementedError

    def step(self, state: WorkflowState) -> tuple[WorkflowState, dict]:
        raise NotImplementedError

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        raise NotImplementedError

    def counters(self, state: WorkflowState) -> dict:
        return {
            "iteration": state.iteration,
            "env_steps": state.env_steps,
            "episodes": state.episodes,
            "rl_updates": state.rl_updates,
        }


@dataclass(frozen=True)
class Budget:
    iterations: int = 0
    env_steps: int = 0
    episodes: int = 0

    def met(self, state: WorkflowState) -> bool:
        if self.iterations and state.iteration >= self.iterations:
            return True
        if self.env_steps and state.env_steps >= self.env_steps:
            return True
        if self.episodes and state.episodes >= self.episodes:
            return True
        return not (self.iterations or self.env_steps or self.episodes)


def _clean(metrics: dict) -> dict:
    out = {}
    for k, v in metrics.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


def learn(
    workflow: Workflow,
    state: WorkflowState,
    budget: Budget,
    eval_every: int = 0,
    eval_episodes: int = 128,
    on_record: Callable[[dict], Any] | None = None,
    on_checkpoint: Callable[[WorkflowState, bool], Any] | None = None,
    checkpoint_every: int = 0,
    target_return: float | None = None,
) -> WorkflowState:
    """Step until the budget is met (or an evaluation reaches ``target_return``).

    Emits one record per step and one per evaluation (every ``eval_every``
    iterations), calls ``on_checkpoint(state, False)`` every
    ``checkpoint_every`` iterations and ``on_checkpoint(state, True)`` exactly
    once at the end.
    """
    emit = on_record or (lambda rec: None)
    while not budget.met(state):
        state, metrics = workflow.step(state)
        emit(_clean({"event": "step", **workflow.counters(state), **metrics}))
        stop = False
        if eval_every and state.iteration % eval_every == 0:
            report = workflow.evaluate(state, rng.fold_in(state.eval_key, state.iteration), eval_episodes)
            rec = {
                "event": "eval",
                **workflow.counters(state),
                "eval/episode_return_mean": report.mean,
                "eval/episode_return_std": report.std,
                "eval/episodes": report.episodes,
            }
            if report.per_agent is not None:
                rec["eval/per_agent_return_mean"] = report.per_agent
            emit(_clean(rec))
            stop = target_return is not None and not math.isnan(target_return) and report.mean >= target_return
        if stop:
            break
        if on_checkpoint and checkpoint_every and state.iteration % checkpoint_every == 0 and not budget.met(state):
            on_checkpoint(state, False)
    if on_checkpoint:
        on_checkpoint(state, True)
    return state


def with_hp(state: WorkflowState, **hp) -> WorkflowState:
    return replace(state, hp={**state.hp, **hp})
