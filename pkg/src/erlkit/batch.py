"""Batched transitions, the unit of data flow between rollout and learning."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass(frozen=True)
class SampleBatch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    logp: np.ndarray | None = None
    value: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.reward.shape[0])

    def take(self, idx) -> "SampleBatch":
        return SampleBatch(**{f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[idx])
                              for f in fields(self)})

    @staticmethod
    def concat(batches: list["SampleBatch"]) -> "SampleBatch":
        if not batches:
            raise ValueError("nothing to concatenate")
        out = {}
        for f in fields(SampleBatch):
            parts = [getattr(b, f.name) for b in batches]
            out[f.name] = None if any(p is None for p in parts) else np.concatenate(parts, axis=0)
        return SampleBatch(**out)
