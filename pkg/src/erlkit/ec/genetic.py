"""Selection and variation operators for the ERL population."""

from __future__ import annotations

import numpy as np

from erlkit.exec import rng


def tournament_select(fitness, key, k: int = 3) -> int:
    """Index of the fittest of ``k`` distinct uniformly drawn members."""
    fitness = np.asarray(fitness, dtype=np.float64)
    n = fitness.shape[0]
    k = min(int(k), n)
    if k < 1:
        raise ValueError("tournament size must be >= 1")
    draws = rng.generator(key).choice(n, size=k, replace=False)
    return int(draws[np.argmax(fitness[draws])])


def gaussian_mutate(params, key, std: float = 0.1, prob: float = 0.1) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if prob <= 0.0 or std == 0.0:
        return params.copy()
    gen = rng.generator(key)
    mask = gen.random(params.shape) < prob
    return params + mask * gen.normal(0.0, std, params.shape)


def uniform_crossover(a, b, key) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("crossover parents must have the same shape")
    take_a = rng.generator(key).random(a.shape) < 0.5
    return np.where(take_a, a, b)
