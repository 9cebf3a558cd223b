"""Generalized advantage estimation."""

from __future__ import annotations

import numpy as np


def gae(rewards, values, terminals, gamma: float = 0.99, lam: float = 0.95):
    """Advantages and returns along the leading (time) axis.

    ``values`` has one more step than ``rewards``: the bootstrap value after
    the last transition. A terminal at ``t`` stops both bootstrapping and
    propagation across ``t``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    done = np.asarray(terminals, dtype=np.float64)
    T = r.shape[0]
    if T == 0:
        raise ValueError("gae needs at least one transition")
    if v.shape[0] != T + 1:
        raise ValueError("values must include the bootstrap value (length T + 1)")
    adv = np.zeros_like(r)
    last = np.zeros_like(r[0])
    for t in range(T - 1, -1, -1):
        live = 1.0 - done[t]
        delta = r[t] + gamma * live * v[t + 1] - v[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + v[:T]
