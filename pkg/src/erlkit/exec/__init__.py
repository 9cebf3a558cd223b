"""Deterministic key splitting, parallel map and batched rollouts."""
