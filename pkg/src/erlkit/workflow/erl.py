"""Evolution-guided RL: a genetic population and a TD3 learner sharing one replay buffer."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from erlkit import ec, net
from erlkit.exec import rng
from erlkit.exec.rollout import Policy, batched_rollout
from erlkit.rl.buffer import ReplayBuffer, buffer_add
from erlkit.rl.td3 import Td3Agent
from erlkit.workflow.base import EvalReport, Workflow, WorkflowState, evaluate_params, next_keys
from erlkit.workflow.td3 import random_prefill, run_updates, td3_hparams

UPDATE_MODES = ("aligned", "fixed")


def rl_update_count(mode: str, timesteps: int, fixed: int) -> int:
    """RL updates for one iteration: the timesteps just sampled, or a constant."""
    if mode == "aligned":
        return int(timesteps)
    if mode == "fixed":
        return int(fixed)
    raise ValueError(f"unknown update mode {mode!r}")


class ErlWorkflow(Workflow):
    """Per iteration: evaluate population and RL actor, breed, run U TD3 updates, inject the RL actor."""

    name = "erl"

    def _build(self):
        cfg = self.cfg
        self.agent = Td3Agent(self.env, cfg.hidden(), cfg["net.layer_norm"])
        self.spec = self.agent.actor_spec
        self.hparams = td3_hparams(cfg)
        self.pop_size = int(cfg["erl.pop_size"])
        self.fitness_episodes = int(cfg["erl.fitness_episodes"])
        self.rl_episodes = int(cfg["erl.rl_episodes"])
        self.warmup_iters = int(cfg["erl.warmup_iters"])
        self.update_mode = cfg["erl.update_mode"]
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"erl.update_mode must be one of {UPDATE_MODES}")
        self.fixed_updates = int(cfg["erl.fixed_updates"])
        self.elites = int(cfg["erl.elites"])
        self.tournament_k = int(cfg["erl.tournament_k"])
        self.mutation_std = float(cfg["erl.mutation_std"])
        self.mutation_prob = float(cfg["erl.mutation_prob"])
        self.sync_period = int(cfg["erl.sync_period"])
        if not 0 <= self.elites < self.pop_size:
            raise ValueError("erl.elites must be below erl.pop_size")

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        agent = self.agent.init(rng.fold_in(key, 0))
        pop = np.stack([net.init_params(self.spec, rng.fold_in(rng.fold_in(key, 1), i)) for i in range(self.pop_size)])
        buffer = ReplayBuffer(int(self.cfg["td3.buffer_size"]))
        prefill = int(self.cfg["erl.random_timesteps"])
        episodes = random_prefill(self.env, buffer, rng.fold_in(key, 2), prefill)
        data = {"agent": agent, "population": pop, "fitness": np.zeros(self.pop_size), "buffer": buffer}
        return replace(state, env_steps=prefill, episodes=episodes, data=data)

    def breed(self, pop, fitness, key):
        """Elitism, then tournament parents, uniform crossover and Gaussian mutation."""
        order = np.argsort(-fitness, kind="stable")
        new = pop.copy()
        keep = set(order[: self.elites].tolist())
        for i in range(self.pop_size):
            if i in keep:
                continue
            k = rng.fold_in(key, i)
            a = ec.tournament_select(fitness, rng.fold_in(k, 0), self.tournament_k)
            b = ec.tournament_select(fitness, rng.fold_in(k, 1), self.tournament_k)
            child = ec.uniform_crossover(pop[a], pop[b], rng.fold_in(k, 2))
            new[i] = ec.gaussian_mutate(child, rng.fold_in(k, 3), self.mutation_std, self.mutation_prob)
        return new

    def step(self, state: WorkflowState):
        hp = self.hparams
        new_key, (pop_key, rl_key, breed_key, update_key) = next_keys(state, 4)
        d = state.data
        agent, pop, buffer = d["agent"], d["population"], d["buffer"]

        res = batched_rollout(self.env, Policy(self.spec), pop, self.fitness_episodes, pop_key,
                              episodes=self.fitness_episodes, workers=self.workers)
        fitness = res.mean_returns()
        buffer_add(buffer, res.flat())
        explore = batched_rollout(self.env, Policy(self.spec, "noisy", hp.expl_noise), agent.actor, self.rl_episodes,
                                  rl_key, episodes=self.rl_episodes)
        buffer_add(buffer, explore.flat())
        timesteps = res.steps + explore.steps

        new_pop = self.breed(pop, fitness, breed_key)
        metrics = {
            "fitness_mean": float(fitness.mean()),
            "fitness_max": float(fitness.max()),
            "rl_explore_return": float(np.mean(explore.episode_returns)),
            "timesteps_iter": timesteps,
        }
        updates = 0
        warm = state.iteration < self.warmup_iters
        if not warm:
            updates = rl_update_count(self.update_mode, timesteps, self.fixed_updates)
            agent, metrics["critic_loss"] = run_updates(self.agent, agent, buffer, update_key, hp, updates)
            if (state.iteration + 1) % self.sync_period == 0:
                new_pop[int(np.argmin(fitness))] = agent.actor
        metrics["rl_updates_iter"] = updates
        state = replace(
            state,
            iteration=state.iteration + 1,
            key=new_key,
            env_steps=state.env_steps + timesteps,
            episodes=state.episodes + self.pop_size * self.fitness_episodes + self.rl_episodes,
            rl_updates=state.rl_updates + updates,
            data={**d, "agent": agent, "population": new_pop, "fitness": fitness},
        )
        return state, metrics

    def champion(self, state: WorkflowState) -> np.ndarray:
        """Best member of the last evaluated generation (the elite survives breeding)."""
        return state.data["population"][int(np.argmax(state.data["fitness"]))]

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        agents = np.stack([self.champion(state), state.data["agent"].actor])
        return evaluate_params(self.env, self.spec, agents, key, episodes, workers=self.workers)
