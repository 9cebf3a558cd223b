"""Experiment runner: configuration, metrics, checkpoints."""
