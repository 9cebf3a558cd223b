"""Ask/tell optimizers against hand-written update formulas."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erlkit import ec
from erlkit.ec.cmaes import cma_constants
from erlkit.ec.openes import mirrored_noise
from erlkit.exec import rng

KEY = rng.key_from_seed(0)


def _ranks_oracle(f):
    # O(n^2) average ranks, then scaled to [-0.5, 0.5]
    n = len(f)
    r = [sum(1 for g in f if g < x) + 0.5 * (sum(1 for g in f if g == x) - 1) for x in f]
    return np.array(r) / (n - 1) - 0.5


@given(st.lists(st.integers(-5, 5).map(float), min_size=2, max_size=40))
def test_centered_ranks_oracle(f):
    r = ec.centered_ranks(f)
    np.testing.assert_allclose(r, _ranks_oracle(f), atol=1e-12)
    assert abs(r.sum()) < 1e-9


def test_centered_ranks_distinct_values():
    np.testing.assert_allclose(ec.centered_ranks([3.0, 1.0, 2.0]), [0.5, -0.5, 0.0])


def test_mirrored_noise_pairs():
    eps = mirrored_noise(KEY, 8, 5)
    np.testing.assert_array_equal(eps[0::2], -eps[1::2])
    with pytest.raises(ValueError):
        mirrored_noise(KEY, 7, 5)


def test_noise_table_rows_are_windows():
    table = ec.NoiseTable(1000, seed=3)
    eps = mirrored_noise(KEY, 6, 10, table=table)
    for row in eps[0::2]:
        starts = [i for i in range(991) if np.array_equal(table.noise[i : i + 10], row)]
        assert starts


def test_openes_tell_matches_formula(gen):
    mean = gen.standard_normal(6)
    state = ec.openes_init(mean, sigma=0.1, lr=0.05, weight_decay=0.01)
    cand, eps = ec.openes_ask(state, KEY, 10)
    np.testing.assert_allclose(cand, mean + 0.1 * eps)
    fit = gen.standard_normal(10)
    new, _ = ec.openes_tell(state, eps, fit)
    g = -(_ranks_oracle(list(fit)) @ eps) / (10 * 0.1)
    m = 0.1 * g
    v = 0.001 * g * g
    step = 0.05 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(new.mean, mean - step - 0.05 * 0.01 * mean, rtol=1e-12)


def test_openes_constant_fitness_only_decays(gen):
    mean = gen.standard_normal(5)
    state = ec.openes_init(mean, sigma=0.02, lr=0.01, weight_decay=0.005)
    _, eps = ec.openes_ask(state, KEY, 8)
    new, info = ec.openes_tell(state, eps, np.full(8, 3.0))
    assert info["grad_norm"] == 0.0
    np.testing.assert_allclose(new.mean, mean * (1 - 0.01 * 0.005), rtol=1e-14)


def test_openes_rejects_non_finite():
    state = ec.openes_init(np.zeros(3))
    _, eps = ec.openes_ask(state, KEY, 4)
    with pytest.raises(ValueError):
        ec.openes_tell(state, eps, [0.0, np.nan, 1.0, 2.0])


def test_ars_tell_matches_formula(gen):
    state = ec.ars_init(gen.standard_normal(4), sigma=0.03, lr=0.02, elites=2)
    cand, deltas = ec.ars_ask(state, KEY, 8)
    np.testing.assert_allclose(cand[0::2] - cand[1::2], 2 * 0.03 * deltas)
    fit = np.array([5.0, 1.0, 0.0, 0.5, 2.0, 9.0, 1.0, 1.5])
    rp, rm = ec.ars_split_rewards(fit)
    new, info = ec.ars_tell(state, deltas, rp, rm)
    # directions ranked by max(r+, r-): k=2 (9.0) and k=0 (5.0)
    sr = np.std([2.0, 5.0, 9.0, 1.0])
    expect = state.mean + 0.02 / (2 * sr) * ((2.0 - 9.0) * deltas[2] + (5.0 - 1.0) * deltas[0])
    np.testing.assert_allclose(new.mean, expect, rtol=1e-12)
    assert info["reward_std"] == pytest.approx(sr)


def test_ars_degenerate_rewards_skip_update():
    state = ec.ars_init(np.ones(3), elites=2)
    _, deltas = ec.ars_ask(state, KEY, 4)
    new, info = ec.ars_tell(state, deltas, np.ones(2), np.ones(2))
    assert info["degenerate"] and np.array_equal(new.mean, state.mean)


def test_ves_log_weights_and_tell(gen):
    w = ec.log_weights(4)
    raw = np.log(4.5) - np.log(np.arange(1, 5))
    np.testing.assert_allclose(w, raw / raw.sum())
    state = ec.ves_init(np.zeros(3), elites=4)
    cand, _ = ec.ves_ask(state, KEY, 8)
    fit = gen.standard_normal(8)
    new, _ = ec.ves_tell(state, cand, fit)
    np.testing.assert_allclose(new.mean, w @ cand[np.argsort(-fit)[:4]])


def test_cem_tell_and_floor_schedule(gen):
    state = ec.cem_init(np.zeros(3), init_var=0.5, elites=3, floor_start=1e-2, floor_end=1e-4, planned_iters=3)
    cand = ec.cem_ask(state, KEY, 6)
    fit = gen.standard_normal(6)
    new, info = ec.cem_tell(state, cand, fit)
    elite = cand[np.argsort(-fit)[:3]]
    np.testing.assert_allclose(new.mean, elite.mean(0))
    np.testing.assert_allclose(new.var, elite.var(0) + 1e-2)
    assert info["noise_floor"] == 1e-2
    assert ec.noise_floor(new) == pytest.approx(1e-3)
    assert ec.noise_floor(ec.cem_tell(new, cand, fit)[0]) == pytest.approx(1e-4)


def test_cma_constants_hansen_defaults():
    # [DERIVED] Hansen's tutorial formulas for n=10, lambda=10, mu=5
    k = cma_constants(10, 10, 5)
    w = np.log(5.5) - np.log(np.arange(1, 6))
    w /= w.sum()
    np.testing.assert_allclose(k.weights, w)
    mu_eff = 1 / (w**2).sum()
    assert k.mu_eff == pytest.approx(mu_eff)
    assert k.cs == pytest.approx((mu_eff + 2) / (10 + mu_eff + 5))
    assert k.c1 == pytest.approx(2 / (11.3**2 + mu_eff))
    assert k.chi_n == pytest.approx(math.sqrt(10) * (1 - 1 / 40 + 1 / 2100))


def test_cmaes_sphere_quick():
    state = ec.cmaes_init(np.ones(5), 0.5, popsize=10, elites=5)
    for g in range(200):
        x = ec.cmaes_ask(state, rng.fold_in(KEY, g))
        state, _ = ec.cmaes_tell(state, x, -(x**2).sum(1))
        assert np.array_equal(state.C, state.C.T)
    assert (state.mean**2).sum() < 1e-10


def test_cmaes_capacity_error():
    with pytest.raises(ec.CapacityError):
        ec.cmaes_init(np.zeros(20), max_dim=10)


def test_tournament_picks_best_of_sample():
    fit = np.arange(10.0)
    picks = {ec.tournament_select(fit, rng.fold_in(KEY, i), k=10) for i in range(5)}
    assert picks == {9}


def test_crossover_and_mutation(gen):
    a, b = np.zeros(1000), np.ones(1000)
    c = ec.uniform_crossover(a, b, KEY)
    assert set(np.unique(c)) <= {0.0, 1.0} and 400 < c.sum() < 600
    m = ec.gaussian_mutate(a, KEY, std=0.1, prob=0.1)
    assert 50 < np.count_nonzero(m) < 150
    assert np.array_equal(ec.gaussian_mutate(a, KEY, prob=0.0), a)
