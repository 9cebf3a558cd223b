"""Observation normalization: fixed statistics (VBN) or running statistics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from erlkit.env import EnvSpec, batched_step, env_reset
from erlkit.exec import rng

MODES = ("none", "vbn", "rs")
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class ObsNormState:
    mode: str
    mean: np.ndarray
    var: np.ndarray
    count: float = 0.0

    @classmethod
    def empty(cls, mode: str, obs_dim: int) -> "ObsNormState":
        if mode not in MODES:
            raise ValueError(f"unknown observation normalization {mode!r}")
        return cls(mode, np.zeros(obs_dim), np.ones(obs_dim), 0.0)


def normalize(state: ObsNormState | None, obs):
    if state is None or state.mode == "none":
        return obs
    return (obs - state.mean) / np.maximum(np.sqrt(state.var), STD_FLOOR)


def rs_update(state: ObsNormState, obs_batch) -> ObsNormState:
    """Merge a batch into streaming (count, mean, population var) statistics."""
    x = np.asarray(obs_batch, dtype=np.float64).reshape(-1, state.mean.shape[0])
    nb = x.shape[0]
    if nb == 0:
        return state
    mb = x.mean(axis=0)
    m2b = ((x - mb) ** 2).sum(axis=0)
    na = state.count
    if na == 0:
        return replace(state, mean=mb, var=m2b / nb, count=float(nb))
    n = na + nb
    delta = mb - state.mean
    mean = state.mean + delta * (nb / n)
    m2 = state.var * na + m2b + delta * delta * (na * nb / n)
    return replace(state, mean=mean, var=m2 / n, count=float(n))


def random_observations(env: EnvSpec, key, n: int = 10000) -> np.ndarray:
    """Observations seen over ``n`` timesteps of uniformly random actions on one lane."""
    reset_key, act_key = rng.fold_in(key, 0), rng.fold_in(key, 1)
    gen = rng.generator(act_key)
    if env.discrete:
        actions = gen.integers(0, env.n_actions, size=n)
    else:
        actions = gen.uniform(env.action_low, env.action_high, size=(n, env.action_dim))
    state, obs = env_reset(env, reset_key)
    out = np.empty((n, env.obs_dim))
    for t in range(n):
        out[t] = obs[0]
        state, res = batched_step(env, state, actions[t : t + 1])
        obs = res.obs
    return out


def vbn_fit(env: EnvSpec, key, n: int = 10000) -> ObsNormState:
    """Fixed statistics from ``n`` random timesteps."""
    obs = random_observations(env, key, n)
    return ObsNormState("vbn", obs.mean(axis=0), obs.var(axis=0), float(n))
