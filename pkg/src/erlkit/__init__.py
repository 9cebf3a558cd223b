"""Deterministic, data-parallel evolutionary reinforcement learning on CPUs."""

__version__ = "0.1.0"
