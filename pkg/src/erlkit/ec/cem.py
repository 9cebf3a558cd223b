"""Diagonal cross-entropy method with a decaying additive variance floor."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from erlkit.exec import rng


@dataclass(frozen=True)
class CemState:
    mean: np.ndarray
    var: np.ndarray
    elites: int = 5
    floor_start: float = 1e-3
    floor_end: float = 1e-5
    planned_iters: int = 1000
    iteration: int = 0


def noise_floor(state: CemState) -> float:
    """Exponential interpolation from ``floor_start`` to ``floor_end`` over the planned iterations."""
    if state.planned_iters <= 1:
        return state.floor_end
    frac = min(state.iteration, state.planned_iters - 1) / (state.planned_iters - 1)
    return float(state.floor_start * (state.floor_end / state.floor_start) ** frac)


def cem_init(mean, init_var=1e-3, elites=5, floor_start=1e-3, floor_end=1e-5, planned_iters=1000) -> CemState:
    mean = np.array(mean, dtype=np.float64)
    return CemState(
        mean, np.full(mean.shape, float(init_var)), int(elites), float(floor_start), float(floor_end), int(planned_iters)
    )


def cem_ask(state: CemState, key, n: int) -> np.ndarray:
    z = rng.generator(key).standard_normal((n, state.mean.shape[0]))
    return state.mean + z * np.sqrt(state.var)


def cem_tell(state: CemState, candidates, fitness):
    x = np.asarray(candidates, dtype=np.float64)
    fitness = np.asarray(fitness, dtype=np.float64)
    h = state.elites
    if not 1 <= h <= x.shape[0]:
        raise ValueError(f"elites must be in [1, {x.shape[0]}], got {h}")
    elite = x[np.argsort(-fitness, kind="stable")[:h]]
    mean = elite.mean(axis=0)
    floor = noise_floor(state)
    var = ((elite - mean) ** 2).mean(axis=0) + floor
    return replace(state, mean=mean, var=var, iteration=state.iteration + 1), {"noise_floor": floor}
