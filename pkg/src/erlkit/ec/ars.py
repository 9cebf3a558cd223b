"""Augmented Random Search (V2-t): top-b mirrored directions, plain SGD."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from erlkit.exec import rng


@dataclass(frozen=True)
class ArsState:
    mean: np.ndarray
    sigma: float = 0.03
    lr: float = 0.02
    elites: int = 16


def ars_init(mean, sigma=0.03, lr=0.02, elites=16) -> ArsState:
    return ArsState(np.array(mean, dtype=np.float64), float(sigma), float(lr), int(elites))


def ars_ask(state: ArsState, key, n: int):
    """Returns ``(candidates, deltas)``; candidate ``2k`` is ``+delta_k``, ``2k+1`` is ``-delta_k``."""
    if n < 2 or n % 2:
        raise ValueError(f"ARS needs an even population >= 2, got {n}")
    if not 1 <= state.elites <= n // 2:
        raise ValueError(f"elites must be in [1, {n // 2}], got {state.elites}")
    deltas = rng.generator(key).standard_normal((n // 2, state.mean.shape[0]))
    cand = np.empty((n, state.mean.shape[0]))
    cand[0::2] = state.mean + state.sigma * deltas
    cand[1::2] = state.mean - state.sigma * deltas
    return cand, deltas


def ars_split_rewards(fitness):
    f = np.asarray(fitness, dtype=np.float64)
    return f[0::2], f[1::2]


def ars_tell(state: ArsState, deltas, r_plus, r_minus):
    """One SGD step on the top-``elites`` directions ranked by max(r+, r-).

    Returns ``(state, info)``; when the elite rewards have zero spread the
    update is skipped and ``info['degenerate']`` is true.
    """
    r_plus = np.asarray(r_plus, dtype=np.float64)
    r_minus = np.asarray(r_minus, dtype=np.float64)
    deltas = np.asarray(deltas)
    b = state.elites
    if not 1 <= b <= r_plus.shape[0]:
        raise ValueError(f"elites must be in [1, {r_plus.shape[0]}], got {b}")
    score = np.maximum(r_plus, r_minus)
    top = np.argsort(-score, kind="stable")[:b]
    sigma_r = float(np.std(np.concatenate([r_plus[top], r_minus[top]])))
    if sigma_r == 0.0:
        return state, {"degenerate": True, "reward_std": 0.0}
    step = (r_plus[top] - r_minus[top]) @ deltas[top]
    mean = state.mean + state.lr / (b * sigma_r) * step
    return replace(state, mean=mean), {"degenerate": False, "reward_std": sigma_r}
