"""CEM-RL: a CEM population where half the candidates take TD3 steps against a shared critic."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from erlkit import ec
from erlkit.exec import rng
from erlkit.exec.rollout import Policy, batched_rollout
from erlkit.rl.buffer import ReplayBuffer, buffer_add, buffer_sample
from erlkit.rl.optim import AdamState, adam_step
from erlkit.rl.td3 import Td3Agent, Td3AgentState, soft_update
from erlkit.workflow.base import EvalReport, Workflow, WorkflowState, evaluate_params, next_keys
from erlkit.workflow.erl import UPDATE_MODES, rl_update_count
from erlkit.workflow.td3 import random_prefill, td3_hparams


def planned_iterations(cfg) -> int:
    """Iterations the CEM noise-floor schedule spans."""
    if int(cfg["cemrl.planned_iters"]):
        return int(cfg["cemrl.planned_iters"])
    if int(cfg["budget.iterations"]):
        return int(cfg["budget.iterations"])
    if int(cfg["budget.episodes"]):
        per_iter = int(cfg["cemrl.pop_size"]) * int(cfg["cemrl.fitness_episodes"])
        return max(1, -(-int(cfg["budget.episodes"]) // per_iter))
    return 1000


class CemRlWorkflow(Workflow):
    """One iteration, in order:

    1. evaluate the pending candidates, pushing their trajectories to the buffer;
    2. ``cem_tell`` on the fitnesses, then ask the next candidates;
    3. after warm-up, pick half of them at random; the shared critic takes U
       steps and every picked actor takes U steps against it;
    4. the (partly RL-improved) candidates become the next pending set.

    This is the usual sample / RL / evaluate cycle rotated so that U can equal
    the timesteps sampled in the same iteration.
    """

    name = "cemrl"

    def _build(self):
        cfg = self.cfg
        self.agent = Td3Agent(self.env, cfg.hidden(), cfg["net.layer_norm"])
        self.spec = self.agent.actor_spec
        self.hparams = td3_hparams(cfg)
        self.pop_size = int(cfg["cemrl.pop_size"])
        self.rl_agents = int(round(self.pop_size * float(cfg["cemrl.rl_fraction"])))
        self.fitness_episodes = int(cfg["cemrl.fitness_episodes"])
        self.warmup_iters = int(cfg["cemrl.warmup_iters"])
        self.update_mode = cfg["cemrl.update_mode"]
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"cemrl.update_mode must be one of {UPDATE_MODES}")
        self.fixed_updates = int(cfg["cemrl.fixed_updates"])

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        cfg = self.cfg
        agent = self.agent.init(rng.fold_in(key, 0))
        cem = ec.cem_init(agent.actor, cfg["cemrl.init_var"], int(cfg["cemrl.elites"]), cfg["cemrl.floor_start"],
                          cfg["cemrl.floor_end"], planned_iterations(cfg))
        buffer = ReplayBuffer(int(cfg["td3.buffer_size"]))
        prefill = int(cfg["cemrl.random_timesteps"])
        episodes = random_prefill(self.env, buffer, rng.fold_in(key, 1), prefill)
        pending = ec.cem_ask(cem, rng.fold_in(key, 2), self.pop_size)
        data = {"critic": agent, "cem": cem, "buffer": buffer, "pending": pending}
        return replace(state, env_steps=prefill, episodes=episodes, data=data)

    def rl_phase(self, critic: Td3AgentState, actors: np.ndarray, buffer, key, updates: int):
        """Shared-critic TD3 for the chosen actors; returns (critic state, actors, mean critic loss).

        Critic step ``u`` bootstraps through the target of actor ``u mod k``;
        every actor then takes one step on the same minibatch, each with its
        own target network and an optimizer starting fresh for this phase.
        """
        hp = self.hparams
        k = actors.shape[0]
        targets = actors.copy()
        actors = actors.copy()
        opts = [AdamState.zeros_like(a) for a in actors]
        losses = []
        for u in range(updates):
            uk = rng.fold_in(key, u)
            batch = buffer_sample(buffer, rng.fold_in(uk, 0), hp.batch_size)
            noise = self.agent.target_noise(rng.fold_in(uk, 1), len(batch), hp)
            y = self.agent.td_target(critic, batch, noise, hp, actor_target=targets[u % k])
            l1, g1 = self.agent.critic_loss_and_grad(critic.critic1, batch.obs, batch.action, y)
            l2, g2 = self.agent.critic_loss_and_grad(critic.critic2, batch.obs, batch.action, y)
            c1, o1 = adam_step(critic.critic1, g1, critic.critic1_opt, lr=hp.lr)
            c2, o2 = adam_step(critic.critic2, g2, critic.critic2_opt, lr=hp.lr)
            critic = replace(critic, critic1=c1, critic2=c2, critic1_opt=o1, critic2_opt=o2,
                             updates=critic.updates + 1)
            losses.append(0.5 * (l1 + l2))
            if critic.updates % hp.actor_update_interval:
                continue
            for j in range(k):
                _, ga = self.agent.actor_loss_and_grad(actors[j], critic.critic1, batch.obs)
                actors[j], opts[j] = adam_step(actors[j], ga, opts[j], lr=hp.lr)
                targets[j] = soft_update(targets[j], actors[j], hp.tau)
            critic = replace(
                critic,
                critic1_target=soft_update(critic.critic1_target, critic.critic1, hp.tau),
                critic2_target=soft_update(critic.critic2_target, critic.critic2, hp.tau),
            )
        return critic, actors, (float(np.mean(losses)) if losses else float("nan"))

    def step(self, state: WorkflowState):
        new_key, (eval_key, ask_key, pick_key, update_key) = next_keys(state, 4)
        d = state.data
        critic, cem, buffer, pending = d["critic"], d["cem"], d["buffer"], d["pending"]

        res = batched_rollout(self.env, Policy(self.spec), pending, self.fitness_episodes, eval_key,
                              episodes=self.fitness_episodes, workers=self.workers)
        fitness = res.mean_returns()
        buffer_add(buffer, res.flat())
        timesteps = res.steps
        cem, info = ec.cem_tell(cem, pending, fitness)
        candidates = ec.cem_ask(cem, ask_key, self.pop_size)

        metrics = {
            "fitness_mean": float(fitness.mean()),
            "fitness_max": float(fitness.max()),
            "timesteps_iter": timesteps,
            "ec/noise_floor": info["noise_floor"],
        }
        updates = 0
        if state.iteration >= self.warmup_iters and self.rl_agents > 0:
            updates = rl_update_count(self.update_mode, timesteps, self.fixed_updates)
            chosen = np.sort(rng.generator(pick_key).choice(self.pop_size, self.rl_agents, replace=False))
            critic, improved, metrics["critic_loss"] = self.rl_phase(critic, candidates[chosen], buffer, update_key,
                                                                     updates)
            candidates[chosen] = improved
            metrics["rl_chosen"] = chosen
        metrics["rl_updates_iter"] = updates
        state = replace(
            state,
            iteration=state.iteration + 1,
            key=new_key,
            env_steps=state.env_steps + timesteps,
            episodes=state.episodes + self.pop_size * self.fitness_episodes,
            rl_updates=state.rl_updates + updates,
            data={**d, "critic": critic, "cem": cem, "pending": candidates},
        )
        return state, metrics

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        return evaluate_params(self.env, self.spec, state.data["cem"].mean, key, episodes, workers=self.workers)
