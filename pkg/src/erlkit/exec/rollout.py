"""Hierarchical batched rollouts over an (agent x environment) lane grid.

Lane ``(i, j)`` runs environment copy ``j`` under agent ``i`` with key
``fold_in(fold_in(key, i), j)``. All lanes advance together as one
vectorized computation; because every kernel involved is element-wise or a
fixed-order accumulation, each lane's trajectory is bitwise what it would be
if the lane ran alone. Agents may additionally be split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from erlkit import net
from erlkit.batch import SampleBatch
from erlkit.env import EnvSpec, EnvState, NumericFault, batched_step, env_reset
from erlkit.exec import rng
from erlkit.exec.parallel import chunk_bounds, parallel_map, resolve_workers
from erlkit.rl.normalize import ObsNormState, normalize

POLICY_MODES = ("deterministic", "sample", "noisy", "random")


@dataclass(frozen=True)
class Policy:
    """How lanes turn network outputs into actions.

    deterministic: argmax / mean / tanh output. sample: draw from the
    categorical or gaussian head (log-probs recorded). noisy: deterministic
    output plus N(0, noise_std^2), clipped. random: uniform actions, no net.
    """

    net: net.MlpSpec | None
    mode: str = "deterministic"
    noise_std: float = 0.0

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.mode != "random" and self.net is None:
            raise ValueError("a network spec is required unless mode is 'random'")


@dataclass
class RolloutResult:
    """Per-lane trajectories with a validity mask.

    Transition arrays have shape ``(lanes, T, ...)``; ``episode_returns`` has
    shape ``(agents, episodes)`` in episodes mode and lists completed episode
    returns per lane otherwise.
    """

    batch: SampleBatch
    valid: np.ndarray
    episode_returns: np.ndarray | list
    episode_lengths: np.ndarray | list
    env_state: EnvState
    obs: np.ndarray
    agents: int
    envs_per_agent: int
    running: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def steps(self) -> int:
        return int(self.valid.sum())

    def flat(self) -> SampleBatch:
        """Valid transitions, lane-major then time order."""
        return self.batch.take(self.valid)

    def mean_returns(self) -> np.ndarray:
        return np.asarray(self.episode_returns).mean(axis=1)


def _actions(env: EnvSpec, policy: Policy, params, obs_n, step_keys):
    """Actions (and log-probs for sampling policies) for an (m, e) grid of observations."""
    m, e = obs_n.shape[:2]
    if policy.mode == "random":
        if env.discrete:
            u = rng.uniform(step_keys)
            return np.minimum((u * env.n_actions).astype(np.int64), env.n_actions - 1), None
        dims = np.arange(env.action_dim, dtype=np.int64)
        u = rng.uniform(rng.fold_in(step_keys[..., None, :], dims))
        return env.action_low + (env.action_high - env.action_low) * u, None
    spec = policy.net
    out = net.forward(spec, params, obs_n)
    if spec.head == "categorical":
        logits = out
        if policy.mode == "deterministic":
            return np.argmax(logits, axis=-1), None
        z = logits - logits.max(axis=-1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        cdf = np.cumsum(p, axis=-1)
        u = rng.uniform(step_keys)[..., None]
        a = np.minimum((u >= cdf).sum(axis=-1), spec.output_dim - 1)
        logp = np.log(np.take_along_axis(p, a[..., None], axis=-1)[..., 0])
        return a, logp
    if spec.head == "gaussian":
        mean, logstd = out
        if policy.mode == "deterministic":
            return mean, None
        dims = np.arange(spec.output_dim, dtype=np.int64)
        eps = rng.normal(rng.fold_in(step_keys[..., None, :], dims))
        logstd = logstd[..., None, :]  # (m, 1, out) against (m, e, out)
        a = mean + np.exp(logstd) * eps
        logp = (-0.5 * eps * eps - logstd - 0.5 * np.log(2 * np.pi)).sum(axis=-1)
        return a, logp
    a = out
    if policy.mode == "noisy" and policy.noise_std > 0:
        dims = np.arange(spec.output_dim, dtype=np.int64)
        a = a + policy.noise_std * rng.normal(rng.fold_in(step_keys[..., None, :], dims))
        a = np.clip(a, env.action_low, env.action_high)
    return a, None


def rollout_lanes(
    env: EnvSpec,
    policy: Policy,
    params,
    lane_keys,
    steps: int | None = None,
    episodes: int | None = None,
    obs_norm: ObsNormState | None = None,
    env_state: EnvState | None = None,
    obs: np.ndarray | None = None,
    start_step: int = 0,
    running: tuple[np.ndarray, np.ndarray] | None = None,
) -> RolloutResult:
    """Run an (m, e) lane grid given explicit lane keys of shape (m, e, 2).

    Exactly one of ``steps`` (T transitions per lane, resuming from
    ``env_state``/``obs`` when given) or ``episodes`` (k completed episodes
    per agent, lane ``j`` running episodes ``j, j+e, ...``) must be set.
    ``running`` carries (return, length) of unfinished episodes across
    steps-mode calls; the updated pair is returned on the result.
    """
    if (steps is None) == (episodes is None):
        raise ValueError("exactly one of steps or episodes must be given")
    lane_keys = rng.as_key(lane_keys)
    m, e = lane_keys.shape[:2]
    n = m * e
    if policy.mode != "random":
        params = np.asarray(params, dtype=np.float64).reshape(m, -1)
    flat_keys = lane_keys.reshape(n, 2)
    if env_state is None:
        env_state, obs = env_reset(env, rng.fold_in(flat_keys, 0))
    policy_keys = rng.fold_in(flat_keys, 1)

    if episodes is not None:
        lane_idx = np.tile(np.arange(e), m)
        quota = np.array([len(range(j, episodes, e)) for j in lane_idx])
        completed = np.zeros(n, dtype=np.int64)
        ep_returns = np.zeros((m, episodes))
        ep_lengths = np.zeros((m, episodes), dtype=np.int64)
    else:
        quota = None
        ep_returns = [[] for _ in range(n)]
        ep_lengths = [[] for _ in range(n)]
    if running is None:
        running, running_len = np.zeros(n), np.zeros(n, dtype=np.int64)
    else:
        running, running_len = np.asarray(running[0], dtype=np.float64), np.asarray(running[1], dtype=np.int64)
    active = np.ones(n, dtype=bool) if quota is None else quota > 0

    rec = {k: [] for k in ("obs", "action", "reward", "next_obs", "terminated", "truncated", "logp", "valid")}
    t = 0
    while True:
        if steps is not None and t >= steps:
            break
        if steps is None and not active.any():
            break
        step_keys = rng.fold_in(policy_keys, start_step + t).reshape(m, e, 2)
        obs_n = normalize(obs_norm, obs).reshape(m, e, env.obs_dim)
        try:
            actions, logp = _actions(env, policy, params, obs_n, step_keys)
        except NumericFault as err:
            raise NumericFault(f"policy fault at lane grid step {t}: {err}") from err
        flat_actions = actions.reshape(n, -1) if not env.discrete else actions.reshape(n)
        try:
            env_state, res = batched_step(env, env_state, flat_actions)
        except NumericFault as err:
            lane = err.index
            coords = None if lane is None else divmod(int(lane), e)
            raise NumericFault(f"environment fault at step {t}, lane (agent, env) = {coords}") from err
        valid = active.copy()
        rec["obs"].append(obs)
        rec["action"].append(flat_actions)
        rec["reward"].append(res.reward)
        rec["next_obs"].append(res.final_obs)
        rec["terminated"].append(res.terminated)
        rec["truncated"].append(res.truncated)
        rec["logp"].append(None if logp is None else logp.reshape(n))
        rec["valid"].append(valid)

        running = np.where(valid, running + res.reward, running)
        running_len = running_len + valid
        done = (res.terminated | res.truncated) & valid
        for lane in np.flatnonzero(done):
            if quota is not None:
                agent, j = divmod(int(lane), e)
                slot = j + e * int(completed[lane])
                ep_returns[agent, slot] = running[lane]
                ep_lengths[agent, slot] = running_len[lane]
                completed[lane] += 1
                if completed[lane] >= quota[lane]:
                    active[lane] = False
            else:
                ep_returns[lane].append(float(running[lane]))
                ep_lengths[lane].append(int(running_len[lane]))
        running = np.where(done, 0.0, running)
        running_len = np.where(done, 0, running_len)
        obs = res.obs
        t += 1

    def stack(name, dtype=None):
        if not rec[name] or rec[name][0] is None:
            return None
        arr = np.stack(rec[name], axis=1)
        return arr if dtype is None else arr.astype(dtype)

    if t == 0:
        empty = np.zeros((n, 0))
        batch = SampleBatch(np.zeros((n, 0, env.obs_dim)), empty, empty, np.zeros((n, 0, env.obs_dim)),
                            empty.astype(bool), empty.astype(bool))
        valid = empty.astype(bool)
    else:
        batch = SampleBatch(
            obs=stack("obs"),
            action=stack("action"),
            reward=stack("reward"),
            next_obs=stack("next_obs"),
            terminated=stack("terminated"),
            truncated=stack("truncated"),
            logp=stack("logp"),
        )
        valid = stack("valid")
    return RolloutResult(batch, valid, ep_returns, ep_lengths, env_state, obs, m, e, (running, running_len))


def lane_keys(key, agents: int, envs_per_agent: int, agent_offset: int = 0) -> np.ndarray:
    """(agents, envs_per_agent, 2) grid of ``fold_in(fold_in(key, i), j)``."""
    a = rng.fold_in(rng.as_key(key)[None, :], np.arange(agent_offset, agent_offset + agents, dtype=np.int64))
    return rng.fold_in(a[:, None, :], np.arange(envs_per_agent, dtype=np.int64)[None, :])


def _pad_time(arr, T):
    if arr is None or arr.shape[1] == T:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[1] = (0, T - arr.shape[1])
    return np.pad(arr, pad)


def _merge(parts: list[RolloutResult]) -> RolloutResult:
    if len(parts) == 1:
        return parts[0]
    T = max(p.valid.shape[1] for p in parts)
    fields = {}
    for name in ("obs", "action", "reward", "next_obs", "terminated", "truncated", "logp"):
        arrs = [_pad_time(getattr(p.batch, name), T) for p in parts]
        fields[name] = None if any(a is None for a in arrs) else np.concatenate(arrs, axis=0)
    valid = np.concatenate([_pad_time(p.valid, T) for p in parts], axis=0)
    if isinstance(parts[0].episode_returns, np.ndarray):
        ret = np.concatenate([p.episode_returns for p in parts], axis=0)
        lens = np.concatenate([p.episode_lengths for p in parts], axis=0)
    else:
        ret = sum((p.episode_returns for p in parts), [])
        lens = sum((p.episode_lengths for p in parts), [])
    st = parts[0].env_state
    env_state = EnvState(
        np.concatenate([p.env_state.physical for p in parts]),
        np.concatenate([p.env_state.step_count for p in parts]),
        np.concatenate([p.env_state.rng for p in parts]),
    ) if st is not None else None
    obs = np.concatenate([p.obs for p in parts])
    return RolloutResult(SampleBatch(**fields), valid, ret, lens, env_state, obs,
                         sum(p.agents for p in parts), parts[0].envs_per_agent)


def batched_rollout(
    env: EnvSpec,
    policy: Policy,
    params,
    envs_per_agent: int,
    key,
    steps: int | None = None,
    episodes: int | None = None,
    obs_norm: ObsNormState | None = None,
    workers: int | None = 1,
    agents: int | None = None,
    shared_lanes: bool = False,
) -> RolloutResult:
    """Roll out ``m`` agents (rows of ``params``, or one vector) on ``e`` envs each.

    Agents are split into contiguous chunks, one per worker; results are
    identical for every worker count. Random policies take ``params=None``
    and an explicit ``agents`` count. With ``shared_lanes`` every agent uses
    agent 0's lane keys, so all agents face the same episode starts.
    """
    if envs_per_agent < 1:
        raise ValueError("envs_per_agent must be >= 1")
    if policy.mode == "random":
        m = agents or 1
        p = None
    else:
        p = np.asarray(params, dtype=np.float64)
        p = p[None, :] if p.ndim == 1 else p
        m = p.shape[0]
    if m < 1:
        raise ValueError("need at least one agent")
    if shared_lanes:
        keys = np.broadcast_to(lane_keys(key, 1, envs_per_agent), (m, envs_per_agent, 2))
    else:
        keys = lane_keys(key, m, envs_per_agent)
    chunks = chunk_bounds(m, resolve_workers(workers))

    def run(bounds):
        lo, hi = bounds
        return rollout_lanes(env, policy, None if p is None else p[lo:hi], keys[lo:hi], steps=steps,
                             episodes=episodes, obs_norm=obs_norm)

    return _merge(parallel_map(run, chunks, workers=len(chunks)))
