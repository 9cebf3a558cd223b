"""Pure evolutionary policy search."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from erlkit import ec, net
from erlkit.exec import rng
from erlkit.exec.rollout import Policy, batched_rollout
from erlkit.rl.normalize import ObsNormState, rs_update, vbn_fit
from erlkit.workflow.base import EvalReport, Workflow, WorkflowState, evaluate_params, next_keys

ALGOS = ("openes", "ars", "ves", "cmaes", "cem")


def policy_spec(env, hidden, layer_norm: bool = False) -> net.MlpSpec:
    """Deterministic policy net: argmax over logits or a tanh-squashed action."""
    if env.discrete:
        return net.MlpSpec(env.obs_dim, tuple(hidden), env.n_actions, head="categorical", layer_norm=layer_norm)
    return net.MlpSpec(env.obs_dim, tuple(hidden), env.action_dim, head="tanh", layer_norm=layer_norm,
                       scale=env.action_high)


class EsWorkflow(Workflow):
    """ask -> batched fitness rollouts -> tell; the center is what gets evaluated."""

    name = "es"

    def _build(self):
        cfg = self.cfg
        self.algo = cfg["ec.algo"]
        if self.algo not in ALGOS:
            raise ValueError(f"unknown ec.algo {self.algo!r}")
        self.spec = policy_spec(self.env, cfg.hidden(), cfg["net.layer_norm"])
        self.pop_size = int(cfg["ec.pop_size"])
        self.fitness_episodes = int(cfg["es.fitness_episodes"])
        mode = cfg["es.obs_norm"]
        self.obs_norm_mode = ("rs" if self.algo == "ars" else "vbn") if mode == "auto" else mode
        self.common_starts = bool(cfg["es.common_starts"])
        self.table = None
        if cfg["ec.noise_table"] and self.algo in ("openes", "ves"):
            self.table = ec.NoiseTable(int(cfg["ec.noise_table_size"]), seed=int(cfg["seed"]))

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        cfg = self.cfg
        params = net.init_params(self.spec, rng.fold_in(key, 0))
        steps = 0
        if self.obs_norm_mode == "vbn":
            n = int(cfg["es.vbn_steps"])
            norm = vbn_fit(self.env, rng.fold_in(key, 1), n)
            steps = n
        else:
            norm = ObsNormState.empty(self.obs_norm_mode, self.env.obs_dim)
        if self.algo == "openes":
            es = ec.openes_init(params, cfg["ec.openes.sigma"], cfg["ec.openes.lr"], cfg["ec.openes.weight_decay"],
                                cfg["ec.mirrored"])
        elif self.algo == "ars":
            es = ec.ars_init(params, cfg["ec.ars.sigma"], cfg["ec.ars.lr"], cfg["ec.ars.elites"])
        elif self.algo == "ves":
            es = ec.ves_init(params, cfg["ec.ves.sigma"], cfg["ec.ves.elites"], cfg["ec.mirrored"])
        elif self.algo == "cmaes":
            es = ec.cmaes_init(params, cfg["ec.cmaes.sigma0"], self.pop_size, cfg["ec.cmaes.elites"],
                               cfg["ec.cmaes.max_dim"])
        else:
            planned = int(cfg["budget.iterations"]) or 1000
            es = ec.cem_init(params, cfg["ec.cem.init_var"], cfg["ec.cem.elites"], cfg["ec.cem.floor_start"],
                             cfg["ec.cem.floor_end"], planned)
        return replace(state, env_steps=steps, data={"ec": es, "obs_norm": norm})

    def center(self, state: WorkflowState) -> np.ndarray:
        return state.data["ec"].mean

    def ask(self, es, key):
        if self.algo == "openes":
            return ec.openes_ask(es, key, self.pop_size, self.table)
        if self.algo == "ves":
            return ec.ves_ask(es, key, self.pop_size, self.table)
        if self.algo == "ars":
            return ec.ars_ask(es, key, self.pop_size)
        if self.algo == "cmaes":
            return ec.cmaes_ask(es, key), None
        return ec.cem_ask(es, key, self.pop_size), None

    def tell(self, es, candidates, aux, fitness):
        if self.algo == "openes":
            return ec.openes_tell(es, aux, fitness)
        if self.algo == "ves":
            return ec.ves_tell(es, candidates, fitness)
        if self.algo == "ars":
            r_plus, r_minus = ec.ars_split_rewards(fitness)
            return ec.ars_tell(es, aux, r_plus, r_minus)
        if self.algo == "cmaes":
            return ec.cmaes_tell(es, candidates, fitness)
        return ec.cem_tell(es, candidates, fitness)

    def fitness(self, state: WorkflowState, candidates, key):
        """Mean undiscounted return of every candidate, plus the rollout."""
        res = batched_rollout(self.env, Policy(self.spec), candidates, self.fitness_episodes, key,
                              episodes=self.fitness_episodes, obs_norm=state.data["obs_norm"], workers=self.workers,
                              shared_lanes=self.common_starts)
        return res.mean_returns(), res

    def step(self, state: WorkflowState):
        new_key, (ask_key, eval_key) = next_keys(state, 2)
        es = state.data["ec"]
        candidates, aux = self.ask(es, ask_key)
        fitness, res = self.fitness(state, candidates, eval_key)
        es, info = self.tell(es, candidates, aux, fitness)
        norm = state.data["obs_norm"]
        if norm.mode == "rs":
            norm = rs_update(norm, res.flat().obs)
        metrics = {
            "fitness_mean": float(np.mean(fitness)),
            "fitness_max": float(np.max(fitness)),
            "fitness_min": float(np.min(fitness)),
        }
        metrics.update({f"ec/{k}": v for k, v in info.items()})
        state = replace(
            state,
            iteration=state.iteration + 1,
            key=new_key,
            env_steps=state.env_steps + res.steps,
            episodes=state.episodes + len(candidates) * self.fitness_episodes,
            data={**state.data, "ec": es, "obs_norm": norm},
        )
        return state, metrics

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        return evaluate_params(self.env, self.spec, self.center(state), key, episodes, state.data["obs_norm"],
                               self.workers)
