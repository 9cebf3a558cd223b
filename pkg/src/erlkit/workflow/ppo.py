"""On-policy PPO over a few parallel environment lanes."""

from __future__ import annotations

from dataclasses import fields, replace

import numpy as np

from erlkit.exec import rng
from erlkit.exec.rollout import Policy, lane_keys, rollout_lanes
from erlkit.rl.gae import gae
from erlkit.rl.ppo import PpoAgent, PpoHParams, PpoMinibatch
from erlkit.workflow.base import EvalReport, Workflow, WorkflowState, evaluate_params, next_keys


class PpoWorkflow(Workflow):
    """Collect ``steps_per_iter`` timesteps, estimate advantages, run PPO epochs.

    Episodes cut by the step limit bootstrap from the critic's value of the
    final observation; only true terminations stop bootstrapping.
    """

    name = "ppo"
    tunable = ("w_actor", "w_critic", "w_entropy", "gamma", "gae_lambda", "clip_eps", "lr", "max_grad_norm")

    def _build(self):
        cfg = self.cfg
        self.agent = PpoAgent(self.env, cfg.hidden(), cfg["net.layer_norm"])
        self.num_envs = int(cfg["ppo.num_envs"])
        self.horizon = max(1, int(cfg["ppo.steps_per_iter"]) // self.num_envs)
        self.hparams = PpoHParams(
            w_actor=cfg["ppo.w_actor"],
            w_critic=cfg["ppo.w_critic"],
            w_entropy=cfg["ppo.w_entropy"],
            gamma=cfg["ppo.gamma"],
            gae_lambda=cfg["ppo.gae_lambda"],
            clip_eps=cfg["ppo.clip_eps"],
            lr=cfg["ppo.lr"],
            max_grad_norm=cfg["ppo.max_grad_norm"],
            epochs=int(cfg["ppo.epochs"]),
            minibatch=int(cfg["ppo.minibatch"]),
        )

    def hp(self, state: WorkflowState) -> PpoHParams:
        names = {f.name for f in fields(PpoHParams)}
        return replace(self.hparams, **{k: v for k, v in state.hp.items() if k in names})

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        agent = self.agent.init(rng.fold_in(key, 0))
        res = rollout_lanes(self.env, Policy(self.agent.actor_spec, "sample"), agent.actor,
                            lane_keys(rng.fold_in(key, 1), 1, self.num_envs), steps=0)
        data = {
            "agent": agent,
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
        res = rollout_lanes(
            self.env,
            Policy(self.agent.actor_spec, "sample"),
            agent.actor,
            lane_keys(roll_key, 1, self.num_envs),
            steps=self.horizon,
            env_state=d["env_state"],
            obs=d["obs"],
            running=d["running"],
        )
        b = res.batch  # (lanes, T, ...)
        values = self.agent.values(agent, b.obs)
        reward = b.reward.copy()
        cut = b.truncated & ~b.terminated
        if cut.any():
            reward[cut] += hp.gamma * self.agent.values(agent, b.next_obs[cut])
        done = b.terminated | b.truncated
        bootstrap = self.agent.values(agent, res.obs)
        v_all = np.concatenate([values, bootstrap[:, None]], axis=1)
        adv, returns = gae(reward.T, v_all.T, done.T, hp.gamma, hp.gae_lambda)
        n = b.reward.size
        batch = PpoMinibatch(
            obs=b.obs.reshape(n, -1),
            action=b.action.reshape(n, -1) if not self.env.discrete else b.action.reshape(n),
            logp_old=b.logp.reshape(n),
            advantage=adv.T.reshape(n),
            returns=returns.T.reshape(n),
        )
        agent, metrics = self.agent.update(agent, batch, update_key, hp)
        finished = [r for lane in res.episode_returns for r in lane]
        if finished:
            metrics["train/episode_return_mean"] = float(np.mean(finished))
        state = replace(
            state,
            iteration=state.iteration + 1,
            key=new_key,
            env_steps=state.env_steps + n,
            episodes=state.episodes + len(finished),
            rl_updates=state.rl_updates + metrics["gradient_steps"],
            data={**d, "agent": agent, "env_state": res.env_state, "obs": res.obs, "running": res.running},
        )
        return state, metrics

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        return evaluate_params(self.env, self.agent.actor_spec, state.data["agent"].actor, key, episodes,
                               workers=self.workers)
