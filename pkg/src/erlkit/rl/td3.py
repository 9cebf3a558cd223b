"""Twin delayed deep deterministic policy gradient."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from erlkit import net
from erlkit.batch import SampleBatch
from erlkit.env import EnvSpec, NumericFault
from erlkit.exec import rng
from erlkit.rl.buffer import ReplayBuffer, buffer_sample
from erlkit.rl.optim import AdamState, adam_step


@dataclass(frozen=True)
class Td3HParams:
    gamma: float = 0.99
    tau: float = 0.005
    expl_noise: float = 0.1
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 256
    lr: float = 3e-4
    actor_update_interval: int = 2


@dataclass(frozen=True)
class Td3AgentState:
    actor: np.ndarray
    critic1: np.ndarray
    critic2: np.ndarray
    actor_target: np.ndarray
    critic1_target: np.ndarray
    critic2_target: np.ndarray
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    updates: int = 0


def soft_update(target: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    return tau * online + (1.0 - tau) * target


class Td3Agent:
    """Deterministic tanh actor and twin Q critics over ``concat(obs, action)``."""

    def __init__(self, env: EnvSpec, hidden=(256, 256), layer_norm: bool = False):
        if env.discrete:
            raise ValueError("TD3 needs a continuous action space")
        self.env = env
        self.actor_spec = net.MlpSpec(env.obs_dim, tuple(hidden), env.action_dim, head="tanh",
                                      layer_norm=layer_norm, scale=env.action_high)
        self.critic_spec = net.MlpSpec(env.obs_dim + env.action_dim, tuple(hidden), 1, head="linear",
                                       layer_norm=layer_norm)

    def init(self, key) -> Td3AgentState:
        actor = net.init_params(self.actor_spec, rng.fold_in(key, 0))
        c1 = net.init_params(self.critic_spec, rng.fold_in(key, 1))
        c2 = net.init_params(self.critic_spec, rng.fold_in(key, 2))
        return Td3AgentState(
            actor, c1, c2, actor.copy(), c1.copy(), c2.copy(),
            AdamState.zeros_like(actor), AdamState.zeros_like(c1), AdamState.zeros_like(c2),
        )

    def act(self, actor, obs) -> np.ndarray:
        return net.forward(self.actor_spec, actor, np.atleast_2d(obs), exact=False)

    def q(self, critic, obs, action) -> np.ndarray:
        x = np.concatenate([obs, action.reshape(obs.shape[0], -1)], axis=1)
        return net.forward(self.critic_spec, critic, x, exact=False)[:, 0]

    def target_noise(self, key, n: int, hp: Td3HParams) -> np.ndarray:
        noise = rng.generator(key).normal(0.0, hp.policy_noise, size=(n, self.env.action_dim))
        return np.clip(noise, -hp.noise_clip, hp.noise_clip)

    def td_target(self, state: Td3AgentState, batch: SampleBatch, noise: np.ndarray, hp: Td3HParams,
                  actor_target: np.ndarray | None = None) -> np.ndarray:
        """r + gamma * (1 - terminated) * min(Q1', Q2') at the smoothed target action."""
        actor_target = state.actor_target if actor_target is None else actor_target
        a_next = self.act(actor_target, batch.next_obs) + noise
        a_next = np.clip(a_next, self.env.action_low, self.env.action_high)
        q1 = self.q(state.critic1_target, batch.next_obs, a_next)
        q2 = self.q(state.critic2_target, batch.next_obs, a_next)
        live = 1.0 - batch.terminated.astype(np.float64)
        return batch.reward + hp.gamma * live * np.minimum(q1, q2)

    def critic_loss_and_grad(self, critic, obs, action, target):
        """Mean squared TD error of one critic and its flat gradient."""
        x = np.concatenate([obs, action.reshape(obs.shape[0], -1)], axis=1)
        q, tape = net.forward(self.critic_spec, critic, x, tape=True, exact=False)
        err = q[:, 0] - target
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise NumericFault("non-finite critic loss")
        grad = net.backward(self.critic_spec, critic, tape, (2.0 / err.shape[0]) * err[:, None])
        return loss, grad

    def actor_loss_and_grad(self, actor, critic, obs):
        """-mean Q(s, actor(s)) and its gradient w.r.t. the actor parameters.

        ``actor`` may be a (k, P) stack; each actor then gets its own gradient
        on the shared ``obs`` batch and the loss is the mean over actors.
        """
        obs = np.asarray(obs, dtype=np.float64)
        actor = np.asarray(actor)
        if actor.ndim == 2:
            obs = np.broadcast_to(obs, actor.shape[:1] + obs.shape)
        a, a_tape = net.forward(self.actor_spec, actor, obs, tape=True, exact=False)
        x = np.concatenate([obs, a], axis=-1)
        q, c_tape = net.forward(self.critic_spec, critic, x, tape=True, exact=False)
        loss = -float(np.mean(q))
        d_q = np.full_like(q, -1.0 / q.shape[-2])
        _, d_x = net.backward(self.critic_spec, critic, c_tape, d_q, input_grad=True, param_grad=False)
        d_a = d_x[..., obs.shape[-1]:]
        return loss, net.backward(self.actor_spec, actor, a_tape, d_a)

    def update(self, state: Td3AgentState, buffer: ReplayBuffer, key, hp: Td3HParams):
        """One critic step; every ``actor_update_interval`` steps also an actor step and soft updates."""
        if buffer.size == 0:
            raise ValueError("TD3 update from an empty replay buffer")
        batch = buffer_sample(buffer, rng.fold_in(key, 0), hp.batch_size)
        noise = self.target_noise(rng.fold_in(key, 1), len(batch), hp)
        y = self.td_target(state, batch, noise, hp)
        l1, g1 = self.critic_loss_and_grad(state.critic1, batch.obs, batch.action, y)
        l2, g2 = self.critic_loss_and_grad(state.critic2, batch.obs, batch.action, y)
        c1, o1 = adam_step(state.critic1, g1, state.critic1_opt, lr=hp.lr)
        c2, o2 = adam_step(state.critic2, g2, state.critic2_opt, lr=hp.lr)
        updates = state.updates + 1
        state = replace(state, critic1=c1, critic2=c2, critic1_opt=o1, critic2_opt=o2, updates=updates)
        metrics = {"critic_loss": 0.5 * (l1 + l2)}
        if updates % hp.actor_update_interval == 0:
            la, ga = self.actor_loss_and_grad(state.actor, state.critic1, batch.obs)
            actor, oa = adam_step(state.actor, ga, state.actor_opt, lr=hp.lr)
            state = replace(
                state,
                actor=actor,
                actor_opt=oa,
                actor_target=soft_update(state.actor_target, actor, hp.tau),
                critic1_target=soft_update(state.critic1_target, state.critic1, hp.tau),
                critic2_target=soft_update(state.critic2_target, state.critic2, hp.tau),
            )
            metrics["actor_loss"] = la
        return state, metrics
