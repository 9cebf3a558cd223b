"""Canonical ES: log-weighted recombination of the best candidates, fixed sigma."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from erlkit.ec.openes import NoiseTable, mirrored_noise


def log_weights(mu: int) -> np.ndarray:
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    return w / w.sum()


@dataclass(frozen=True)
class VesState:
    mean: np.ndarray
    sigma: float = 0.02
    elites: int = 16
    mirrored: bool = True


def ves_init(mean, sigma=0.02, elites=16, mirrored=True) -> VesState:
    return VesState(np.array(mean, dtype=np.float64), float(sigma), int(elites), bool(mirrored))


def ves_ask(state: VesState, key, n: int, table: NoiseTable | None = None):
    eps = mirrored_noise(key, n, state.mean.shape[0], state.mirrored, table)
    return state.mean + state.sigma * eps, eps


def ves_tell(state: VesState, candidates, fitness):
    candidates = np.asarray(candidates, dtype=np.float64)
    fitness = np.asarray(fitness, dtype=np.float64)
    mu = state.elites
    if not 1 <= mu <= fitness.shape[0]:
        raise ValueError(f"elites must be in [1, {fitness.shape[0]}], got {mu}")
    order = np.argsort(-fitness, kind="stable")[:mu]
    mean = log_weights(mu) @ candidates[order]
    return replace(state, mean=mean), {"best_fitness": float(fitness[order[0]])}
