"""Population-based training over any inner workflow, with PBT or CSO-style updates."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from erlkit.exec import rng
from erlkit.exec.parallel import parallel_map
from erlkit.workflow.base import EvalReport, Workflow, WorkflowState, next_keys

SCALES = ("linear", "log", "log1m")


@dataclass(frozen=True)
class HyperRange:
    """Bounds of one hyperparameter and the space its search arithmetic happens in.

    linear: u = x. log: u = ln|x| (both bounds share a sign). log1m:
    u = ln(1 - x), for values approaching 1 such as discounts.
    """

    low: float
    high: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if not self.low <= self.high:
            raise ValueError("low must not exceed high")
        if self.scale == "log" and not (self.low > 0 or self.high < 0):
            raise ValueError("log-scale bounds must be strictly positive or strictly negative")
        if self.scale == "log1m" and not self.high < 1:
            raise ValueError("log1m-scale bounds must lie below 1")

    @property
    def sign(self) -> float:
        return -1.0 if self.high < 0 else 1.0

    def to_u(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.scale == "log":
            return np.log(self.sign * x)
        if self.scale == "log1m":
            return np.log1p(-x)
        return x

    def from_u(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.scale == "log":
            x = self.sign * np.exp(u)
        elif self.scale == "log1m":
            x = -np.expm1(u)
        else:
            x = u
        return self.clamp(x)

    @property
    def u_bounds(self) -> tuple[float, float]:
        a, b = float(self.to_u(self.low)), float(self.to_u(self.high))
        return (min(a, b), max(a, b))

    def clamp(self, x):
        return np.clip(x, self.low, self.high)

    def perturb(self, x: float, factor: float) -> float:
        """Scale by ``factor`` in the key's natural space, then clamp."""
        if self.scale == "log1m":
            return float(self.clamp(1.0 - (1.0 - x) * factor))
        return float(self.clamp(x * factor))


def search_space(table: dict) -> dict[str, HyperRange]:
    return {
        name: HyperRange(float(e["low"]), float(e["high"]), e.get("scale", "linear"))
        for name, e in sorted(table.items())
    }


def sample_hypers(space: dict[str, HyperRange], key) -> dict[str, float]:
    """Uniform in each key's search space (log-uniform for log scales)."""
    gen = rng.generator(key)
    out = {}
    for name, r in space.items():
        lo, hi = r.u_bounds
        out[name] = float(r.from_u(gen.uniform(lo, hi)))
    return out


@dataclass
class HyperIndividual:
    inner: WorkflowState
    hypers: dict
    velocity: dict = field(default_factory=dict)
    meta_objective: float = -math.inf


def exploit_explore(population: list[HyperIndividual], key, space: dict[str, HyperRange], ratio: float = 0.2,
                    perturb: float = 0.2):
    """Bottom ``ceil(ratio * n)`` members copy a random top member, then perturb its hyperparameters.

    Returns ``(population, replaced_indices)``; the input list is not modified.
    """
    n = len(population)
    q = math.ceil(ratio * n)
    if n < 2 or q == 0:
        return list(population), []
    q = min(q, n // 2)
    meta = np.array([m.meta_objective for m in population])
    order = np.argsort(meta, kind="stable")
    bottom, top = order[:q], order[n - q :]
    gen = rng.generator(key)
    new = list(population)
    for b in bottom:
        donor = population[int(top[gen.integers(q)])]
        hypers = {}
        for name, r in space.items():
            factor = 1.0 + perturb if gen.random() < 0.5 else 1.0 - perturb
            hypers[name] = r.perturb(donor.hypers[name], factor)
        inner = replace(copy.deepcopy(donor.inner), hp=dict(hypers))
        new[int(b)] = HyperIndividual(inner, hypers, dict(donor.velocity), donor.meta_objective)
    return new, [int(b) for b in bottom]


def cso_pair_update(u_teacher, u_student, v_student, r1, r2):
    """v' = r1 * v + r2 * (u_t - u_s); u' = u_s + v' (before clamping)."""
    v = r1 * v_student + r2 * (u_teacher - u_student)
    return u_student + v, v


def cso_update(population: list[HyperIndividual], key, space: dict[str, HyperRange], per_coordinate: bool = True):
    """Random disjoint pairs; each loser inherits the winner's inner state and moves toward its hyperparameters.

    Winners pass through untouched, as does the unpaired member of an odd
    population. Returns ``(population, student_indices)``.
    """
    n = len(population)
    gen = rng.generator(key)
    perm = gen.permutation(n)
    new = list(population)
    students = []
    names = list(space)
    for p in range(n // 2):
        a, b = int(perm[2 * p]), int(perm[2 * p + 1])
        ta, tb = population[a], population[b]
        t, s = (a, b) if ta.meta_objective >= tb.meta_objective else (b, a)
        teacher, student = population[t], population[s]
        if per_coordinate:
            r1, r2 = gen.random(len(names)), gen.random(len(names))
        else:
            r1, r2 = np.full(len(names), gen.random()), np.full(len(names), gen.random())
        hypers, velocity = {}, {}
        for i, name in enumerate(names):
            r = space[name]
            u_new, v_new = cso_pair_update(float(r.to_u(teacher.hypers[name])), float(r.to_u(student.hypers[name])),
                                           float(student.velocity.get(name, 0.0)), r1[i], r2[i])
            lo, hi = r.u_bounds
            hypers[name] = float(r.from_u(min(max(u_new, lo), hi)))
            velocity[name] = float(v_new)
        inner = replace(copy.deepcopy(teacher.inner), hp=dict(hypers))
        new[s] = HyperIndividual(inner, hypers, velocity, teacher.meta_objective)
        students.append(s)
    return new, students


class PbtWorkflow(Workflow):
    """Meta-iteration: advance every member, score it, then exploit/explore (or CSO)."""

    name = "pbt"

    def _build(self):
        from erlkit.workflow import registry

        cfg = self.cfg
        self.mode = "cso" if cfg.workflow == "pbt-cso" else "pbt"
        inner_id = cfg["pbt.inner"]
        if inner_id in ("pbt", "pbt-cso"):
            raise ValueError("pbt.inner must be a non-PBT workflow")
        # members run in parallel at this level, so inner workflows stay single-worker
        self.inner = registry.build(cfg.for_workflow(inner_id).replace(**{"exec.workers": 1}))
        self.space = search_space(cfg["pbt.search"])
        unknown = set(self.space) - set(self.inner.tunable)
        if unknown:
            raise ValueError(f"pbt.search names {sorted(unknown)} are not tunable in {inner_id}")
        self.pop_size = int(cfg["pbt.pop_size"])
        self.warmup_steps = int(cfg["pbt.warmup_steps"])
        self.steps_per_iter = int(cfg["pbt.steps_per_iter"])
        self.perturb = float(cfg["pbt.perturb"])
        self.ratio = float(cfg["pbt.selection_ratio"])
        self.meta_episodes = int(cfg["pbt.meta_episodes"])
        self.per_coordinate = bool(cfg["pbt.cso_per_coordinate"])

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        members = []
        for i in range(self.pop_size):
            hypers = sample_hypers(self.space, rng.fold_in(rng.fold_in(key, 1), i))
            inner = self.inner.init(rng.fold_in(rng.fold_in(key, 0), i))
            inner = replace(inner, hp=dict(hypers))
            members.append(HyperIndividual(inner, hypers, {k: 0.0 for k in self.space}, -math.inf))
        steps = sum(m.inner.env_steps for m in members)
        episodes = sum(m.inner.episodes for m in members)
        return replace(state, env_steps=steps, episodes=episodes, data={"population": members})

    def _advance(self, member: HyperIndividual, key, steps: int):
        inner = member.inner
        before = (inner.env_steps, inner.episodes, inner.rl_updates)
        for _ in range(steps):
            inner, _ = self.inner.step(inner)
        meta = self.inner.evaluate(inner, key, self.meta_episodes).mean
        delta = (inner.env_steps - before[0], inner.episodes - before[1] + self.meta_episodes,
                 inner.rl_updates - before[2])
        return HyperIndividual(inner, member.hypers, member.velocity, float(meta)), delta

    def step(self, state: WorkflowState):
        new_key, (meta_key, select_key) = next_keys(state, 2)
        steps = self.warmup_steps if state.iteration == 0 else self.steps_per_iter
        results = parallel_map(lambda m, k: self._advance(m, k, steps), state.data["population"], key=meta_key,
                               workers=self.workers)
        population = [r[0] for r in results]
        d_steps, d_eps, d_upd = (sum(r[1][i] for r in results) for i in range(3))
        meta = np.array([m.meta_objective for m in population])
        metrics = {
            "meta/max": float(meta.max()),
            "meta/median": float(np.median(meta)),
            "meta/min": float(meta.min()),
        }
        if self.mode == "pbt":
            population, changed = exploit_explore(population, select_key, self.space, self.ratio, self.perturb)
        else:
            population, changed = cso_update(population, select_key, self.space, self.per_coordinate)
        metrics["replaced"] = changed
        for name in self.space:
            values = [m.hypers[name] for m in population]
            metrics[f"hp/{name}/median"] = float(np.median(values))
            metrics[f"hp/{name}"] = values
        state = replace(
            state,
            iteration=state.iteration + 1,
            key=new_key,
            env_steps=state.env_steps + d_steps,
            episodes=state.episodes + d_eps,
            rl_updates=state.rl_updates + d_upd,
            data={"population": population},
        )
        return state, metrics

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        """The member with the best recorded meta-objective, evaluated afresh."""
        population = state.data["population"]
        best = max(range(len(population)), key=lambda i: population[i].meta_objective)
        return self.inner.evaluate(population[best].inner, key, episodes)


class SyntheticWorkflow(Workflow):
    """Stand-in inner workflow with a known optimum.

    Its evaluation return is ``-(ln lr - ln optimum)^2`` (plus optional
    Gaussian noise), a concave function of one log-scale hyperparameter.
    """

    name = "synthetic"
    tunable = ("lr",)

    def _build(self):
        self.optimum = float(self.cfg["synthetic.optimum"])
        self.noise = float(self.cfg["synthetic.noise"])

    def _init(self, state: WorkflowState, key) -> WorkflowState:
        return replace(state, hp={"lr": self.optimum * 100.0}, data={"progress": 0})

    def objective(self, lr: float) -> float:
        return -((math.log(lr) - math.log(self.optimum)) ** 2)

    def step(self, state: WorkflowState):
        new_key, _ = next_keys(state, 1)
        f = self.objective(state.hp["lr"])
        state = replace(state, iteration=state.iteration + 1, key=new_key,
                        data={"progress": state.data["progress"] + 1})
        return state, {"objective": f}

    def evaluate(self, state: WorkflowState, key, episodes: int) -> EvalReport:
        f = self.objective(state.hp["lr"])
        if self.noise > 0:
            draws = f + self.noise * rng.generator(key).standard_normal(episodes)
            return EvalReport(float(draws.mean()), float(draws.std()), int(episodes))
        return EvalReport(f, 0.0, int(episodes))
