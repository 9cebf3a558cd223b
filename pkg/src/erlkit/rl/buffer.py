"""Uniform-replay ring buffer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from erlkit.batch import SampleBatch
from erlkit.exec import rng

_FIELDS = ("obs", "action", "reward", "next_obs", "terminated")


@dataclass
class ReplayBuffer:
    """FIFO ring of transitions.

    Storage grows geometrically up to ``capacity`` so that a large nominal
    capacity costs nothing until it is used. This is the one mutable
    structure shared inside a workflow: callers serialize access to it.
    """

    capacity: int = 1_000_000
    size: int = 0
    cursor: int = 0
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")

    def _reserve(self, batch: SampleBatch, needed: int):
        if not self.data:
            widths = {
                "obs": batch.obs.shape[1:],
                "action": batch.action.shape[1:],
                "reward": (),
                "next_obs": batch.next_obs.shape[1:],
                "terminated": (),
            }
            self.data = {k: np.zeros((0,) + widths[k]) for k in _FIELDS}
        have = self.data["reward"].shape[0]
        if needed <= have:
            return
        new_len = min(self.capacity, max(needed, 2 * have, 1024))
        for k in _FIELDS:
            old = self.data[k]
            grown = np.zeros((new_len,) + old.shape[1:])
            grown[: old.shape[0]] = old
            self.data[k] = grown

    def copy(self) -> "ReplayBuffer":
        return ReplayBuffer(self.capacity, self.size, self.cursor, {k: v.copy() for k, v in self.data.items()})


def buffer_add(buffer: ReplayBuffer, batch: SampleBatch) -> ReplayBuffer:
    """Append rows at the cursor, overwriting the oldest once full (in place)."""
    n = len(batch)
    if n == 0:
        return buffer
    rows = {
        "obs": batch.obs,
        "action": batch.action.reshape(n, -1) if batch.action.ndim > 1 else batch.action,
        "reward": batch.reward,
        "next_obs": batch.next_obs,
        "terminated": batch.terminated.astype(np.float64),
    }
    if n > buffer.capacity:
        rows = {k: v[n - buffer.capacity :] for k, v in rows.items()}
        n = buffer.capacity
    buffer._reserve(batch, min(buffer.capacity, buffer.size + n))
    pos = (buffer.cursor + np.arange(n)) % buffer.capacity
    for k in _FIELDS:
        buffer.data[k][pos] = rows[k]
    buffer.cursor = int((buffer.cursor + n) % buffer.capacity)
    buffer.size = int(min(buffer.capacity, buffer.size + n))
    return buffer


def buffer_rows(buffer: ReplayBuffer, idx) -> SampleBatch:
    d = buffer.data
    term = d["terminated"][idx].astype(bool)
    return SampleBatch(d["obs"][idx], d["action"][idx], d["reward"][idx], d["next_obs"][idx], term,
                       np.zeros_like(term))


def buffer_sample(buffer: ReplayBuffer, key, n: int) -> SampleBatch:
    """``n`` rows drawn uniformly with replacement."""
    if buffer.size == 0:
        raise ValueError("cannot sample from an empty replay buffer")
    idx = rng.generator(key).integers(0, buffer.size, size=n)
    return buffer_rows(buffer, idx)


def buffer_contents(buffer: ReplayBuffer) -> SampleBatch:
    """Stored rows from oldest to newest."""
    if buffer.size < buffer.capacity:
        idx = np.arange(buffer.size)
    else:
        idx = (buffer.cursor + np.arange(buffer.capacity)) % buffer.capacity
    return buffer_rows(buffer, idx)
