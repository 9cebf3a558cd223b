"""RL building blocks: GAE, replay, optimizers, normalization and loss gradients."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erlkit import net
from erlkit.batch import SampleBatch
from erlkit.env import make_env
from erlkit.exec import rng
from erlkit.rl.buffer import ReplayBuffer, buffer_add, buffer_contents, buffer_sample
from erlkit.rl.gae import gae
from erlkit.rl.normalize import ObsNormState, normalize, random_observations, rs_update, vbn_fit
from erlkit.rl.optim import AdamState, adam_step, clip_by_global_norm
from erlkit.rl.ppo import PpoAgent, PpoHParams, PpoMinibatch
from erlkit.rl.td3 import Td3Agent, Td3HParams


def gae_oracle(r, v, done, gamma, lam):
    """O(T^2): A_t = sum_l (gamma lam)^l delta_{t+l}, cut after the first terminal."""
    T = len(r)
    delta = [r[t] + gamma * (1 - done[t]) * v[t + 1] - v[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        acc, coef = 0.0, 1.0
        for k in range(t, T):
            acc += coef * delta[k]
            if done[k]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_oracle_200_instances():
    g = np.random.default_rng(7)
    for _ in range(200):
        T = int(g.integers(1, 65))
        r = g.standard_normal(T)
        v = g.standard_normal(T + 1)
        done = (g.random(T) < 0.15).astype(float)
        gamma, lam = g.uniform(0.8, 1.0), g.uniform(0.0, 1.0)
        adv, ret = gae(r, v, done, gamma, lam)
        np.testing.assert_allclose(adv, gae_oracle(r, v, done, gamma, lam), rtol=0, atol=1e-10)
        np.testing.assert_allclose(ret, adv + v[:T], atol=1e-12)


def test_gae_lambda_one_is_discounted_return():
    r = np.array([1.0, 2.0, 3.0])
    adv, ret = gae(r, np.zeros(4), np.zeros(3), gamma=0.5, lam=1.0)
    np.testing.assert_allclose(ret, [1 + 1 + 0.75, 2 + 1.5, 3])


def test_gae_time_major_lanes():
    g = np.random.default_rng(1)
    r, v, d = g.standard_normal((10, 3)), g.standard_normal((11, 3)), (g.random((10, 3)) < 0.2).astype(float)
    adv, _ = gae(r, v, d)
    for lane in range(3):
        np.testing.assert_allclose(adv[:, lane], gae(r[:, lane], v[:, lane], d[:, lane])[0])


def _batch(n, start=0.0):
    obs = np.arange(start, start + n)[:, None] * np.ones((1, 2))
    z = np.zeros(n, dtype=bool)
    return SampleBatch(obs, np.ones((n, 1)), np.arange(start, start + n), obs + 1, z, z)


def test_buffer_fifo_wraparound():
    buf = ReplayBuffer(5)
    buffer_add(buf, _batch(3))
    buffer_add(buf, _batch(4, start=3))
    assert buf.size == 5
    np.testing.assert_array_equal(buffer_contents(buf).reward, [2, 3, 4, 5, 6])


@given(st.lists(st.integers(1, 12), min_size=1, max_size=8), st.integers(1, 20))
def test_buffer_keeps_newest_rows(sizes, cap):
    buf = ReplayBuffer(cap)
    start = 0
    for n in sizes:
        buffer_add(buf, _batch(n, start=start))
        start += n
    assert buf.size == min(cap, start)
    np.testing.assert_array_equal(buffer_contents(buf).reward, np.arange(start - buf.size, start))


def test_buffer_sample_deterministic():
    buf = ReplayBuffer(100)
    buffer_add(buf, _batch(50))
    a = buffer_sample(buf, rng.key_from_seed(1), 16)
    b = buffer_sample(buf, rng.key_from_seed(1), 16)
    np.testing.assert_array_equal(a.obs, b.obs)
    with pytest.raises(ValueError):
        buffer_sample(ReplayBuffer(3), rng.key_from_seed(1), 2)


def test_adam_matches_formula(gen):
    p, g1, g2 = gen.standard_normal((3, 4))
    s = AdamState.zeros_like(p)
    p1, s = adam_step(p, g1, s, lr=0.1)
    p2, s = adam_step(p1, g2, s, lr=0.1)
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1**2 + 0.001 * g2**2
    expect = p1 - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p2, expect, rtol=1e-12)
    assert s.t == 2


def test_clip_by_global_norm():
    (a, b), norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([a[0], b[0]], [0.6, 0.8])


def test_running_stats_equal_two_pass():
    g = np.random.default_rng(3)
    state = ObsNormState.empty("rs", 3)
    seen = []
    for _ in range(50):
        x = g.standard_normal((int(g.integers(1, 40)), 3)) * [1.0, 10.0, 0.1] + [5.0, -2.0, 0.0]
        state = rs_update(state, x)
        seen.append(x)
    allx = np.concatenate(seen)
    np.testing.assert_allclose(state.mean, allx.mean(0), rtol=0, atol=1e-8)
    np.testing.assert_allclose(state.var, allx.var(0), rtol=0, atol=1e-8)
    assert state.count == len(allx)


def test_vbn_renormalizes_its_fitting_set():
    env = make_env("pendulum")
    key = rng.key_from_seed(9)
    state = vbn_fit(env, key, 2000)
    z = normalize(state, random_observations(env, key, 2000))
    assert np.all(np.abs(z.mean(0)) < 1e-6)
    assert np.all(np.abs(z.std(0) - 1) < 1e-6)


# -- gradient suites -------------------------------------------------------------


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def central_fd(f, p, h=1e-6):
    out = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        out[i] = (f(p + e) - f(p - e)) / (2 * h)
    return out


FIXTURES = 50
MARGIN = 1e-4  # fixtures this close to a kink are redrawn: the derivative is undefined there


def kink_distance(spec, params, obs):
    """Smallest |ReLU input| over the hidden layers."""
    _, tape = net.forward(spec, params, obs, tape=True)
    d = np.inf
    for li in range(len(spec.hidden)):
        z = tape.pre[li]
        if spec.layer_norm:
            xhat, _ = tape.norm[li]
            layer = net.unflatten(spec, params)[li]
            z = xhat * layer["gain"] + layer["offset"]
        d = min(d, float(np.abs(z).min()))
    return d


def _ppo_fixture(env_id, layer_norm, seed):
    g = np.random.default_rng(seed)
    while True:
        fx = _ppo_draw(env_id, layer_norm, seed, g)
        agent, st_, mb, hp = fx
        out = net.forward(agent.actor_spec, st_.actor, mb.obs)
        ratio = np.exp(agent._logp_entropy(out, mb.action)[0] - mb.logp_old)
        clip = np.abs(np.r_[ratio - 1 + hp.clip_eps, ratio - 1 - hp.clip_eps]).min()
        if min(kink_distance(agent.actor_spec, st_.actor, mb.obs),
               kink_distance(agent.critic_spec, st_.critic, mb.obs), clip) > MARGIN:
            return fx


def _ppo_draw(env_id, layer_norm, seed, g):
    env = make_env(env_id)
    agent = PpoAgent(env, hidden=(6, 5), layer_norm=layer_norm)
    st_ = agent.init(rng.key_from_seed(seed))
    st_ = type(st_)(st_.actor + 0.2 * g.standard_normal(st_.actor.shape),
                    st_.critic + 0.2 * g.standard_normal(st_.critic.shape), st_.actor_opt, st_.critic_opt)
    B = 12
    obs = g.standard_normal((B, env.obs_dim))
    if env.discrete:
        action = g.integers(0, env.n_actions, B)
    else:
        action = g.standard_normal((B, env.action_dim))
    out = net.forward(agent.actor_spec, st_.actor, obs)
    logp, _, _ = agent._logp_entropy(out, action)
    mb = PpoMinibatch(obs, action, logp + 0.3 * g.standard_normal(B), g.standard_normal(B), g.standard_normal(B))
    hp = PpoHParams(w_actor=g.uniform(0.5, 2), w_critic=g.uniform(0.1, 1), w_entropy=-g.uniform(0, 0.1))
    return agent, st_, mb, hp


@pytest.mark.parametrize("env_id", ["cartpole", "pendulum"])
def test_ppo_gradients_finite_differences(env_id):
    errs = []
    for seed in range(FIXTURES):
        agent, st_, mb, hp = _ppo_fixture(env_id, layer_norm=seed % 2 == 1, seed=seed)
        _, _, (ga, gc) = agent.loss_and_grad(st_, mb, hp)
        fa = central_fd(lambda a: agent.loss_and_grad(type(st_)(a, st_.critic, st_.actor_opt, st_.critic_opt),
                                                      mb, hp)[0], st_.actor)
        fc = central_fd(lambda c: agent.loss_and_grad(type(st_)(st_.actor, c, st_.actor_opt, st_.critic_opt),
                                                      mb, hp)[0], st_.critic)
        errs += [rel_err(ga, fa), rel_err(gc, fc)]
    assert max(errs) < 1e-4


def _td3_fixture(seed):
    g = np.random.default_rng(100 + seed)
    while True:
        fx = _td3_draw(seed, g)
        agent, actor, critic, obs, action, _ = fx
        a = agent.act(actor, obs)
        if min(kink_distance(agent.actor_spec, actor, obs),
               kink_distance(agent.critic_spec, critic, np.concatenate([obs, action], 1)),
               kink_distance(agent.critic_spec, critic, np.concatenate([obs, a], 1))) > MARGIN:
            return fx


def _td3_draw(seed, g):
    env = make_env("pendulum")
    agent = Td3Agent(env, hidden=(6, 5), layer_norm=seed % 2 == 1)
    st_ = agent.init(rng.key_from_seed(seed))
    actor = st_.actor + 0.2 * g.standard_normal(st_.actor.shape)
    critic = st_.critic1 + 0.2 * g.standard_normal(st_.critic1.shape)
    B = 10
    obs = g.standard_normal((B, env.obs_dim))
    action = g.uniform(-2, 2, (B, 1))
    target = g.standard_normal(B)
    return agent, actor, critic, obs, action, target


def test_td3_critic_gradients_finite_differences():
    errs = []
    for seed in range(FIXTURES):
        agent, _, critic, obs, action, target = _td3_fixture(seed)
        _, grad = agent.critic_loss_and_grad(critic, obs, action, target)
        num = central_fd(lambda c: agent.critic_loss_and_grad(c, obs, action, target)[0], critic)
        errs.append(rel_err(grad, num))
    assert max(errs) < 1e-4


def test_td3_actor_gradients_finite_differences():
    errs = []
    for seed in range(FIXTURES):
        agent, actor, critic, obs, _, _ = _td3_fixture(seed)
        _, grad = agent.actor_loss_and_grad(actor, critic, obs)
        num = central_fd(lambda a: agent.actor_loss_and_grad(a, critic, obs)[0], actor)
        errs.append(rel_err(grad, num))
    assert max(errs) < 1e-4


def test_td3_stacked_actor_gradient_matches_individual():
    agent, actor, critic, obs, _, _ = _td3_fixture(0)
    actors = np.stack([actor, actor * 0.9, actor + 0.01])
    loss, grads = agent.actor_loss_and_grad(actors, critic, obs)
    for i in range(3):
        li, gi = agent.actor_loss_and_grad(actors[i], critic, obs)
        np.testing.assert_allclose(grads[i], gi, rtol=1e-10, atol=1e-12)
    assert loss == pytest.approx(np.mean([agent.actor_loss_and_grad(a, critic, obs)[0] for a in actors]))


def test_td3_target_uses_min_and_terminal_mask():
    agent, _, _, obs, action, _ = _td3_fixture(2)
    st_ = agent.init(rng.key_from_seed(2))
    term = np.array([True, False] * 5)
    batch = SampleBatch(obs, action, np.ones(10), obs, term, np.zeros(10, dtype=bool))
    hp = Td3HParams()
    noise = np.zeros((10, 1))
    y = agent.td_target(st_, batch, noise, hp)
    a_next = agent.act(st_.actor_target, obs)
    q = np.minimum(agent.q(st_.critic1_target, obs, a_next), agent.q(st_.critic2_target, obs, a_next))
    np.testing.assert_allclose(y, 1 + hp.gamma * (~term) * q)
