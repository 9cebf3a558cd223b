"""OpenAI-style evolution strategy: mirrored Gaussian search, rank shaping, Adam."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from erlkit.exec import rng
from erlkit.rl.optim import AdamState, adam_step


def centered_ranks(fitness) -> np.ndarray:
    """Ranks mapped linearly onto [-0.5, 0.5]; ties share their average rank."""
    f = np.asarray(fitness, dtype=np.float64)
    n = f.shape[0]
    if n < 2:
        return np.zeros(n)
    ranks = rankdata(f, method="average") - 1.0
    return ranks / (n - 1) - 0.5


class NoiseTable:
    """A large block of standard normals; perturbations are windows into it."""

    def __init__(self, size: int = 1 << 22, seed: int = 12345):
        self.size = int(size)
        self.seed = int(seed)
        self.noise = rng.generator(rng.key_from_seed(seed)).standard_normal(self.size)

    def rows(self, gen: np.random.Generator, count: int, dim: int) -> np.ndarray:
        if dim > self.size:
            raise ValueError(f"noise table of size {self.size} cannot hold a {dim}-dim perturbation")
        idx = gen.integers(0, self.size - dim + 1, size=count)
        windows = np.lib.stride_tricks.sliding_window_view(self.noise, dim)
        return windows[idx]


def mirrored_noise(key, n: int, dim: int, mirrored: bool = True, table: NoiseTable | None = None) -> np.ndarray:
    """(n, dim) perturbations; with mirroring rows come in (eps, -eps) pairs."""
    if n < 2:
        raise ValueError(f"population size must be >= 2, got {n}")
    gen = rng.generator(key)
    if not mirrored:
        return table.rows(gen, n, dim) if table is not None else gen.standard_normal((n, dim))
    if n % 2:
        raise ValueError(f"mirrored sampling needs an even population, got {n}")
    base = table.rows(gen, n // 2, dim) if table is not None else gen.standard_normal((n // 2, dim))
    eps = np.empty((n, dim))
    eps[0::2] = base
    eps[1::2] = -base
    return eps


@dataclass(frozen=True)
class OpenEsState:
    mean: np.ndarray
    adam: AdamState
    sigma: float = 0.02
    lr: float = 0.01
    weight_decay: float = 0.005
    mirrored: bool = True


def openes_init(mean, sigma=0.02, lr=0.01, weight_decay=0.005, mirrored=True) -> OpenEsState:
    mean = np.array(mean, dtype=np.float64)
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    return OpenEsState(mean, AdamState.zeros_like(mean), float(sigma), float(lr), float(weight_decay), bool(mirrored))


def openes_ask(state: OpenEsState, key, n: int, table: NoiseTable | None = None):
    """Returns ``(candidates, eps)`` with ``candidates = mean + sigma * eps``."""
    eps = mirrored_noise(key, n, state.mean.shape[0], state.mirrored, table)
    return state.mean + state.sigma * eps, eps


def openes_tell(state: OpenEsState, eps, fitness):
    fitness = np.asarray(fitness, dtype=np.float64)
    eps = np.asarray(eps)
    if fitness.shape[0] != eps.shape[0]:
        raise ValueError("fitness and perturbation counts differ")
    if not np.all(np.isfinite(fitness)):
        raise ValueError("fitness values must be finite")
    n = fitness.shape[0]
    shaped = centered_ranks(fitness)
    sigma = state.sigma if state.sigma > 0 else 1.0
    grad = shaped @ eps / (n * sigma)
    # Adam minimizes, so feed the negated ascent direction
    mean, adam = adam_step(state.mean, -grad, state.adam, lr=state.lr, weight_decay=state.weight_decay)
    info = {"grad_norm": float(np.linalg.norm(grad))}
    return replace(state, mean=mean, adam=adam), info
