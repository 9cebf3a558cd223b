"""Classic-control dynamics (CartPole, Pendulum) over batches of lanes.

Every function is pure: states are values, randomness comes from the
per-lane key stored in the state. Lanes never interact, so a batch of ``n``
lanes produces exactly what ``n`` separate single-lane calls would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from erlkit.exec import rng

CARTPOLE = "cartpole"
PENDULUM = "pendulum"

# CartPole constants
_GRAVITY = 9.8
_MASS_CART = 1.0
_MASS_POLE = 0.1
_TOTAL_MASS = _MASS_CART + _MASS_POLE
_HALF_LENGTH = 0.5
_POLEMASS_LENGTH = _MASS_POLE * _HALF_LENGTH
_FORCE_MAG = 10.0
_TAU = 0.02
_X_LIMIT = 2.4
_THETA_LIMIT = 12 * 2 * math.pi / 360

# Pendulum constants
_PEND_G = 10.0
_PEND_M = 1.0
_PEND_L = 1.0
_PEND_DT = 0.05
_MAX_SPEED = 8.0
_MAX_TORQUE = 2.0


class NumericFault(FloatingPointError):
    """Non-finite value in a simulation or network pass."""

    def __init__(self, message: str, index=None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


@dataclass(frozen=True)
class EnvSpec:
    id: str
    obs_dim: int
    discrete: bool
    action_dim: int
    n_actions: int
    action_low: float
    action_high: float
    max_episode_steps: int
    fixed_horizon: bool = False
    dt: float | None = None

    def __post_init__(self):
        if self.max_episode_steps <= 0:
            raise ValueError("max_episode_steps must be positive")

    @property
    def physical_dim(self) -> int:
        return 4 if self.id == CARTPOLE else 2


def make_env(
    id: str,
    fixed_horizon: bool = False,
    max_episode_steps: int | None = None,
    dt: float | None = None,
) -> EnvSpec:
    id = id.lower()
    if id == CARTPOLE:
        return EnvSpec(CARTPOLE, 4, True, 1, 2, 0.0, 1.0, max_episode_steps or 500, fixed_horizon, dt)
    if id == PENDULUM:
        return EnvSpec(
            PENDULUM, 3, False, 1, 0, -_MAX_TORQUE, _MAX_TORQUE, max_episode_steps or 200, fixed_horizon, dt
        )
    raise ValueError(f"unknown environment {id!r}; expected 'cartpole' or 'pendulum'")


@dataclass(frozen=True)
class EnvState:
    physical: np.ndarray  # (n, physical_dim)
    step_count: np.ndarray  # (n,) int64
    rng: np.ndarray  # (n, 2) uint64

    @property
    def n(self) -> int:
        return self.physical.shape[0]

    def take(self, idx) -> "EnvState":
        return EnvState(self.physical[idx], self.step_count[idx], self.rng[idx])


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray  # observation to act on next (post-reset where a lane finished)
    reward: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_obs: np.ndarray  # observation reached by the transition itself, before any reset


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return math.pi - np.mod(math.pi - theta, 2 * math.pi)


def initial_physical(spec: EnvSpec, u: np.ndarray) -> np.ndarray:
    """Initial physical state from unit uniforms ``u`` of shape (n, physical_dim)."""
    u = np.asarray(u, dtype=np.float64)
    if spec.id == CARTPOLE:
        return -0.05 + 0.1 * u
    theta = -math.pi + 2 * math.pi * u[:, 0]
    theta_dot = -1.0 + 2.0 * u[:, 1]
    return np.stack([theta, theta_dot], axis=1)


def observe(spec: EnvSpec, physical: np.ndarray) -> np.ndarray:
    if spec.id == CARTPOLE:
        return physical.copy()
    theta = physical[:, 0]
    return np.stack([np.cos(theta), np.sin(theta), physical[:, 1]], axis=1)


def _reset_draw(spec: EnvSpec, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(physical, next_rng) drawn from per-lane keys of shape (n, 2)."""
    draw_keys = rng.fold_in(keys, 1)
    dims = np.arange(spec.physical_dim, dtype=np.int64)
    u = rng.uniform(rng.fold_in(draw_keys[:, None, :], dims[None, :]))
    return initial_physical(spec, u), rng.fold_in(keys, 0)


def env_reset(spec: EnvSpec, key) -> tuple[EnvState, np.ndarray]:
    """Fresh lanes; a single key gives one lane, an (n, 2) key array gives n."""
    keys = rng.as_key(key).reshape(-1, 2)
    physical, next_rng = _reset_draw(spec, keys)
    state = EnvState(physical, np.zeros(keys.shape[0], dtype=np.int64), next_rng)
    return state, observe(spec, physical)


def _check_actions(spec: EnvSpec, actions, n: int) -> np.ndarray:
    a = np.asarray(actions)
    if spec.discrete:
        a = a.reshape(n)
        if a.dtype.kind == "f":
            if not np.all(np.isfinite(a)):
                bad = int(np.flatnonzero(~np.isfinite(a))[0])
                raise NumericFault("non-finite action", bad)
            a = a.astype(np.int64)
        if np.any((a < 0) | (a >= spec.n_actions)):
            bad = int(np.flatnonzero((a < 0) | (a >= spec.n_actions))[0])
            raise ValueError(f"discrete action out of range at index {bad}")
        return a
    a = np.asarray(a, dtype=np.float64).reshape(n, spec.action_dim)
    finite = np.all(np.isfinite(a), axis=1)
    if not np.all(finite):
        raise NumericFault("non-finite action", int(np.flatnonzero(~finite)[0]))
    return np.clip(a, spec.action_low, spec.action_high)


def _cartpole_dynamics(phys: np.ndarray, a: np.ndarray, dt: float):
    x, x_dot, theta, theta_dot = phys[:, 0], phys[:, 1], phys[:, 2], phys[:, 3]
    force = np.where(a == 1, _FORCE_MAG, -_FORCE_MAG)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + _POLEMASS_LENGTH * theta_dot * theta_dot * sin_t) / _TOTAL_MASS
    theta_acc = (_GRAVITY * sin_t - cos_t * temp) / (
        _HALF_LENGTH * (4.0 / 3.0 - _MASS_POLE * cos_t * cos_t / _TOTAL_MASS)
    )
    x_acc = temp - _POLEMASS_LENGTH * theta_acc * cos_t / _TOTAL_MASS
    nxt = np.stack(
        [x + dt * x_dot, x_dot + dt * x_acc, theta + dt * theta_dot, theta_dot + dt * theta_acc], axis=1
    )
    reward = np.ones(phys.shape[0])
    terminated = (np.abs(nxt[:, 0]) > _X_LIMIT) | (np.abs(nxt[:, 2]) > _THETA_LIMIT)
    return nxt, reward, terminated


def _pendulum_dynamics(phys: np.ndarray, a: np.ndarray, dt: float):
    theta, theta_dot = phys[:, 0], phys[:, 1]
    u = a[:, 0]
    w = wrap_angle(theta)
    reward = -(w * w + 0.1 * theta_dot * theta_dot + 0.001 * u * u)
    acc = 3.0 * _PEND_G / (2.0 * _PEND_L) * np.sin(theta) + 3.0 / (_PEND_M * _PEND_L**2) * u
    new_dot = np.clip(theta_dot + acc * dt, -_MAX_SPEED, _MAX_SPEED)
    new_theta = theta + new_dot * dt
    return np.stack([new_theta, new_dot], axis=1), reward, np.zeros(phys.shape[0], dtype=bool)


def env_step(spec: EnvSpec, state: EnvState, actions) -> tuple[EnvState, StepResult]:
    """One transition per lane, without auto-reset."""
    n = state.n
    if not np.all(np.isfinite(state.physical)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(state.physical), axis=1))[0])
        raise NumericFault("non-finite environment state", bad)
    a = _check_actions(spec, actions, n)
    if spec.id == CARTPOLE:
        phys, reward, terminated = _cartpole_dynamics(state.physical, a, spec.dt or _TAU)
    else:
        phys, reward, terminated = _pendulum_dynamics(state.physical, a, spec.dt or _PEND_DT)
    finite = np.all(np.isfinite(phys), axis=1) & np.isfinite(reward)
    if not np.all(finite):
        raise NumericFault("numeric divergence in dynamics", int(np.flatnonzero(~finite)[0]))
    steps = state.step_count + 1
    truncated = steps >= spec.max_episode_steps
    if spec.fixed_horizon:
        terminated = np.zeros(n, dtype=bool)
    else:
        truncated = truncated & ~terminated
    obs = observe(spec, phys)
    result = StepResult(obs, reward, terminated, truncated, obs)
    return EnvState(phys, steps, state.rng), result


def batched_step(spec: EnvSpec, state: EnvState, actions) -> tuple[EnvState, StepResult]:
    """``env_step`` followed by an immediate reset of every finished lane.

    A finished lane's returned ``obs`` is its fresh initial observation;
    reward and flags still describe the transition that ended the episode and
    ``final_obs`` keeps the observation it ended in.
    """
    nxt, res = env_step(spec, state, actions)
    done = res.terminated | res.truncated
    if not np.any(done):
        return nxt, res
    idx = np.flatnonzero(done)
    phys0, rng0 = _reset_draw(spec, nxt.rng[idx])
    physical = nxt.physical.copy()
    physical[idx] = phys0
    steps = nxt.step_count.copy()
    steps[idx] = 0
    keys = nxt.rng.copy()
    keys[idx] = rng0
    obs = res.obs.copy()
    obs[idx] = observe(spec, phys0)
    return EnvState(physical, steps, keys), replace(res, obs=obs)
