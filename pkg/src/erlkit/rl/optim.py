"""First-order optimizers over flat parameter vectors (minimization)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64), 0)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam; ``weight_decay`` is decoupled (AdamW style)."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        new = new - lr * weight_decay * params
    return new, AdamState(m, v, t)


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float = 0.02) -> np.ndarray:
    return params - lr * grad


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return grads, norm
