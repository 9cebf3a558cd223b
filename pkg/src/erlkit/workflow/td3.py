"""Off-policy TD3, plus helpers shared by the hybrid workflows."""

from __future__ import annotations

from dataclasses import fields, replace

import numpy as np

from erlkit.exec import rng
from erlkit.exec.rollout import Policy, batched_rollout, lane_keys, rollout_lanes
from erlkit.rl.buffer import ReplayBuffer, buffer_add
from erlkit.rl.td3 import Td3Agent, Td3HParams
from erlkit.workflow.base import EvalReport, Workflow, WorkflowState, evaluate_params, next_keys


def td3_hparams(cfg) -> Td3HParams:
    return Td3HParams(
        gamma=cfg["td3.gamma"],
        tau=cfg["td3.tau"],
        expl_noise=cfg["td3.expl_noise"],
        policy_noise=cfg["td3.policy_noise"],
        noise_clip=cfg["td3.noise_clip"],
        batch_size=int(cfg["td3.batch_size"]),
        lr=cfg["td3.lr"],
        actor_update_interval=int(cfg["td3.actor_update_interval"]),
    )


def random_prefill(env, buffer: ReplayBuffer, key, timesteps: int, lanes: int = 128) -> int:
    """Push exactly ``timesteps`` uniform-random transitions; returns episodes finished."""
    if timesteps <= 0:
        return 0
    lanes = min(lanes, timesteps)
    T = -(-timesteps // lanes)
    res = batched_rollout(env, Policy(None, "random"), None, lanes, key, steps=T, agents=1)
    # time-major so the first ``timesteps`` rows are a prefix of every lane
    b = res.batch
    order = np.arange(lanes * T).reshape(lanes, T).T.reshape(-1)[:timesteps]
    flat = b.take((order // T, order % T))
    buffer_add(buffer, flat)
    return int((flat.terminated | flat.truncated).sum())


def run_updates(agent: Td3Agent, state, buffer: ReplayBuffer, key, hp: Td3HParams, count: int):
    """``count`` TD3 updates with keys ``fold_in(key, u)``; returns (state, mean critic loss)."""
    losses = []
    for u in range(count):
        state, m = agent.update(state, buffer, rng.fold_in(key, u), hp)
        losses.append(m["critic_loss"])
    return state, (float(np.mean(losses)) if losses else float("nan"))


class Td3Workflow(Workflow):
    """Each iteration: ``steps_per_iter`` steps on every lane, then one update per transition."""

    name = "td3"
    tunable = ("gamma", "tau", "expl_noise", "policy_noise", "noise_clip", "lr")

    def _build(self):
        cfg = self.cfg
        self.agent = Td3Agent(self.env, cfg.hidden(), cfg["net.layer_norm"])
        self.hparams = td3_hparams(cfg)
        self.num_envs = int(cfg["td3.num_envs"])
        self.steps_per_iter = int(cfg["td3.steps_per_iter"])
        self.random_timesteps = int(cfg["td3.random_timesteps"])
        self.capacity = int(cfg["td3.buffer_size"])

    def hp(self, state: WorkflowState) -> Td3HParams:
        names = {f.name for f in fields(Td3HParams)}
        return replace(self.hparams, **{k: v for k, v in state.hp.items() if k in names})

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        agent = self.agent.init(rng.fold_in(key, 0))
        res = rollout_lanes(self.env, Policy(None, "random"), None, lane_keys(rng.fold_in(key, 1), 1, self.num_envs),
                            steps=0)
        data = {
            "agent": agent,
            "buffer": ReplayBuffer(self.capacity),
            "env_state": res.env_state,
            "obs": res.obs,
            "running": res.running,
        }
        return replace(state, data=data)

    def step(self, state: WorkflowState):
        hp = self.hp(state)
        new_key, (roll_key, update_key) = next_keys(state, 2)
        d = state.data
        agent = d["agent"]
        warm = state.env_steps < self.random_timesteps
        policy = Policy(None, "random") if warm else Policy(self.agent.actor_spec, "noisy", hp.expl_noise)
        res = rollout_lanes(self.env, policy, None if warm else agent.actor, lane_keys(roll_key, 1, self.num_envs),
                            steps=self.steps_per_iter, env_state=d["env_state"], obs=d["obs"], running=d["running"])
        flat = res.flat()
        buffer = d["buffer"]
        buffer_add(buffer, flat)
        metrics = {}
        updates = 0
        if state.env_steps + len(flat) >= self.random_timesteps and buffer.size >= hp.batch_size:
            updates = len(flat)
            agent, metrics["critic_loss"] = run_updates(self.agent, agent, buffer, update_key, hp, updates)
        finished = [r for lane in res.episode_returns for r in lane]
        if finished:
            metrics["train/episode_return_mean"] = float(np.mean(finished))
        state = replace(
            state,
            iteration=state.iteration + 1,
            key=new_key,
            env_steps=state.env_steps + len(flat),
            episodes=state.episodes + len(finished),
            rl_updates=state.rl_updates + updates,
            data={**d, "agent": agent, "env_state": res.env_state, "obs": res.obs, "running": res.running},
        )
        return state, metrics

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        return evaluate_params(self.env, self.agent.actor_spec, state.data["agent"].actor, key, episodes,
                               workers=self.workers)
