"""Gradient-based RL: PPO, TD3, GAE, optimizers, replay, normalization."""
