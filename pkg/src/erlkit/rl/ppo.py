"""Proximal policy optimization with a clipped surrogate."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from erlkit import net
from erlkit.env import EnvSpec, NumericFault
from erlkit.exec import rng
from erlkit.rl.optim import AdamState, adam_step, clip_by_global_norm

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoHParams:
    w_actor: float = 1.0
    w_critic: float = 0.5
    w_entropy: float = -0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    max_grad_norm: float = 10.0
    epochs: int = 4
    minibatch: int = 256


@dataclass(frozen=True)
class PpoAgentState:
    actor: np.ndarray
    critic: np.ndarray
    actor_opt: AdamState
    critic_opt: AdamState


@dataclass(frozen=True)
class PpoMinibatch:
    obs: np.ndarray
    action: np.ndarray
    logp_old: np.ndarray
    advantage: np.ndarray
    returns: np.ndarray


class PpoAgent:
    """Actor/critic definitions; all state is held in :class:`PpoAgentState`."""

    def __init__(self, env: EnvSpec, hidden=(64, 64), layer_norm: bool = False):
        self.env = env
        head = "categorical" if env.discrete else "gaussian"
        out = env.n_actions if env.discrete else env.action_dim
        self.actor_spec = net.MlpSpec(env.obs_dim, tuple(hidden), out, head=head, layer_norm=layer_norm)
        self.critic_spec = net.MlpSpec(env.obs_dim, tuple(hidden), 1, head="linear", layer_norm=layer_norm)

    def init(self, key) -> PpoAgentState:
        actor = net.init_params(self.actor_spec, rng.fold_in(key, 0))
        critic = net.init_params(self.critic_spec, rng.fold_in(key, 1))
        return PpoAgentState(actor, critic, AdamState.zeros_like(actor), AdamState.zeros_like(critic))

    def values(self, state: PpoAgentState, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        v = net.forward(self.critic_spec, state.critic, obs.reshape(-1, obs.shape[-1]), exact=False)
        return v[:, 0].reshape(obs.shape[:-1])

    # -- distribution helpers -------------------------------------------------

    def _logp_entropy(self, out, action):
        """Per-sample log-prob, per-sample entropy and the pieces needed for gradients."""
        if self.env.discrete:
            logits = out
            z = logits - logits.max(axis=1, keepdims=True)
            logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
            logprobs = z - logsum
            probs = np.exp(logprobs)
            a = action.astype(np.int64).reshape(-1)
            logp = logprobs[np.arange(a.shape[0]), a]
            ent = -(probs * logprobs).sum(axis=1)
            return logp, ent, (probs, logprobs, a)
        mean, logstd = out
        std = np.exp(logstd)
        a = action.reshape(mean.shape)
        zs = (a - mean) / std
        logp = (-0.5 * zs * zs - logstd - 0.5 * _LOG_2PI).sum(axis=1)
        ent = np.full(mean.shape[0], float((logstd + 0.5 * (1.0 + _LOG_2PI)).sum()))
        return logp, ent, (zs, std)

    def loss_and_grad(self, state: PpoAgentState, mb: PpoMinibatch, hp: PpoHParams):
        """Total loss, metrics and flat gradients (actor, critic)."""
        B = mb.obs.shape[0]
        out, a_tape = net.forward(self.actor_spec, state.actor, mb.obs, tape=True, exact=False)
        logp, ent, aux = self._logp_entropy(out, mb.action)
        ratio = np.exp(logp - mb.logp_old)
        adv = mb.advantage
        surr1 = ratio * adv
        surr2 = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps) * adv
        unclipped = surr1 <= surr2
        actor_loss = -np.minimum(surr1, surr2).mean()
        entropy = ent.mean()

        v, c_tape = net.forward(self.critic_spec, state.critic, mb.obs, tape=True, exact=False)
        err = v[:, 0] - mb.returns
        critic_loss = 0.5 * np.mean(err * err)
        total = hp.w_actor * actor_loss + hp.w_critic * critic_loss + hp.w_entropy * entropy
        if not np.isfinite(total):
            raise NumericFault("non-finite PPO loss")

        d_logp = hp.w_actor * np.where(unclipped, -adv * ratio, 0.0) / B
        if self.env.discrete:
            probs, logprobs, a = aux
            onehot = np.zeros_like(probs)
            onehot[np.arange(B), a] = 1.0
            d_logits = d_logp[:, None] * (onehot - probs)
            ent_s = -(probs * logprobs).sum(axis=1, keepdims=True)
            d_logits += (hp.w_entropy / B) * (-probs * (logprobs + ent_s))
            g_actor = net.backward(self.actor_spec, state.actor, a_tape, d_logits)
        else:
            zs, std = aux
            d_mean = d_logp[:, None] * zs / std
            d_logstd = (d_logp[:, None] * (zs * zs - 1.0)).sum(axis=0) + hp.w_entropy
            g_actor = net.backward(self.actor_spec, state.actor, a_tape, (d_mean, d_logstd))
        d_v = (hp.w_critic / B) * err[:, None]
        g_critic = net.backward(self.critic_spec, state.critic, c_tape, d_v)

        metrics = {
            "loss": float(total),
            "actor_loss": float(actor_loss),
            "critic_loss": float(critic_loss),
            "entropy": float(entropy),
            "clip_frac": float(np.mean(~unclipped)),
            "approx_kl": float(np.mean(mb.logp_old - logp)),
        }
        return float(total), metrics, (g_actor, g_critic)

    def update(self, state: PpoAgentState, batch: PpoMinibatch, key, hp: PpoHParams):
        """Epochs of shuffled minibatch Adam steps on one iteration's batch.

        Advantages are standardized over the whole batch first.
        """
        adv = batch.advantage
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch = replace(batch, advantage=adv)
        n = batch.obs.shape[0]
        mbs = max(1, min(hp.minibatch, n))
        gen = rng.generator(key)
        history = []
        for _ in range(hp.epochs):
            perm = gen.permutation(n)
            for start in range(0, n, mbs):
                idx = perm[start : start + mbs]
                mb = PpoMinibatch(batch.obs[idx], batch.action[idx], batch.logp_old[idx], batch.advantage[idx],
                                  batch.returns[idx])
                _, metrics, (ga, gc) = self.loss_and_grad(state, mb, hp)
                (ga, gc), gnorm = clip_by_global_norm([ga, gc], hp.max_grad_norm)
                actor, a_opt = adam_step(state.actor, ga, state.actor_opt, lr=hp.lr)
                critic, c_opt = adam_step(state.critic, gc, state.critic_opt, lr=hp.lr)
                state = PpoAgentState(actor, critic, a_opt, c_opt)
                metrics["grad_norm"] = gnorm
                history.append(metrics)
        summary = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
        summary["gradient_steps"] = len(history)
        return state, summary
