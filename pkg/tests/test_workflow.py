"""Workflow contracts, counters and the PBT / CSO population updates."""

import copy
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erlkit.cli.config import Config
from erlkit.exec import rng
from erlkit.workflow import Budget, WorkflowState, learn, registry
from erlkit.workflow.base import with_hp
from erlkit.workflow.erl import rl_update_count
from erlkit.workflow.pbt import (
    HyperIndividual,
    HyperRange,
    cso_pair_update,
    cso_update,
    exploit_explore,
    sample_hypers,
    search_space,
)

from conftest import SMALL

KEY = rng.key_from_seed(0)


def _wf(name, **extra):
    return registry.build(Config({**SMALL[name], "exec.workers": 1, **extra}))


# -- hyperparameter ranges -------------------------------------------------------


@pytest.mark.parametrize("r", [HyperRange(1e-4, 1.0, "log"), HyperRange(-1.0, -1e-5, "log"),
                               HyperRange(0.86, 0.99999, "log1m"), HyperRange(-3.0, 5.0)])
def test_range_roundtrip_and_bounds(r):
    lo, hi = r.u_bounds
    for u in np.linspace(lo, hi, 11):
        x = float(r.from_u(u))
        assert r.low <= x <= r.high
        assert float(r.to_u(x)) == pytest.approx(u, abs=1e-9)


def test_perturb_per_scale():
    assert HyperRange(0.01, 10.0, "log").perturb(1.0, 1.2) == pytest.approx(1.2)
    assert HyperRange(-1.0, -1e-5, "log").perturb(-0.1, 0.8) == pytest.approx(-0.08)
    assert HyperRange(0.5, 0.9999, "log1m").perturb(0.99, 1.2) == pytest.approx(1 - 0.01 * 1.2)
    assert HyperRange(0.0, 1.0).perturb(0.9, 1.2) == 1.0


def test_sample_hypers_in_range():
    space = search_space({"a": {"low": 1e-4, "high": 1e-1, "scale": "log"}, "b": {"low": 0.9, "high": 0.999,
                                                                                 "scale": "log1m"}})
    for i in range(50):
        h = sample_hypers(space, rng.fold_in(KEY, i))
        assert 1e-4 <= h["a"] <= 1e-1 and 0.9 <= h["b"] <= 0.999


def test_bad_range():
    with pytest.raises(ValueError):
        HyperRange(-1.0, 1.0, "log")
    with pytest.raises(ValueError):
        HyperRange(0.5, 1.5, "log1m")


# -- exploit / explore -----------------------------------------------------------


SPACE = {"lr": HyperRange(1e-5, 1.0, "log")}


def _population(metas):
    return [HyperIndividual(WorkflowState(0, KEY, KEY, data={"id": i}), {"lr": 10.0 ** -(i % 5 + 1)},
                            {"lr": 0.0}, float(m)) for i, m in enumerate(metas)]


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.integers(0, 1000))
def test_exploit_properties(metas, seed):
    pop = _population(metas)
    new, replaced = exploit_explore(pop, rng.key_from_seed(seed), SPACE, 0.2, 0.2)
    n = len(pop)
    q = min(math.ceil(0.2 * n), n // 2)
    assert len(replaced) == q
    order = np.argsort(metas, kind="stable")
    assert sorted(replaced) == sorted(order[:q].tolist())
    top = set(order[n - q :].tolist())
    for i in range(n):
        if i in replaced:
            donor = new[i].inner.data["id"]
            assert donor in top
            assert new[i].meta_objective == metas[donor]
            allowed = [float(SPACE["lr"].clamp(pop[donor].hypers["lr"] * f)) for f in (0.8, 1.2)]
            assert any(new[i].hypers["lr"] == pytest.approx(a) for a in allowed)
            assert new[i].inner.hp == new[i].hypers
        else:
            assert new[i] is pop[i]
    # exploit never lowers the recorded best
    assert max(m.meta_objective for m in new) == max(metas)


def test_exploit_deep_copies_inner_state():
    pop = _population([0.0, 1.0, 2.0, 3.0, 4.0])
    pop[4].inner.data["arr"] = np.zeros(3)
    new, replaced = exploit_explore(pop, KEY, SPACE)
    new[replaced[0]].inner.data["arr"][0] = 1.0
    assert pop[4].inner.data["arr"][0] == 0.0


def test_cso_pair_update_formula_1000_fixtures():
    g = np.random.default_rng(11)
    for _ in range(1000):
        ut, us, vs = g.standard_normal(3) * [3, 3, 1]
        r1, r2 = g.random(2)
        u, v = cso_pair_update(ut, us, vs, r1, r2)
        v_ref = r1 * vs + r2 * (ut - us)
        assert abs(v - v_ref) <= 1e-12 * max(1.0, abs(v_ref))
        assert abs(u - (us + v_ref)) <= 1e-12 * max(1.0, abs(us + v_ref))


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=21), st.integers(0, 1000))
def test_cso_update_properties(metas, seed):
    pop = _population(metas)
    new, students = cso_update(pop, rng.key_from_seed(seed), SPACE)
    n = len(pop)
    assert len(students) == n // 2
    winners = [i for i in range(n) if i not in students]
    for i in winners:
        assert new[i] is pop[i]
    lo, hi = SPACE["lr"].u_bounds
    for s in students:
        assert 1e-5 <= new[s].hypers["lr"] <= 1.0
        assert new[s].meta_objective >= metas[s]
        teacher = new[s].inner.data["id"]
        assert metas[teacher] >= metas[s]
        assert lo <= math.log(new[s].hypers["lr"]) <= hi + 1e-12


def test_cso_student_moves_toward_teacher():
    pop = _population([5.0, 1.0])
    pop[0].hypers["lr"], pop[1].hypers["lr"] = 1e-2, 1e-4
    new, students = cso_update(pop, KEY, SPACE)
    assert students == [1]
    assert 1e-4 < new[1].hypers["lr"] <= 1e-2


# -- budgets, counters and records -----------------------------------------------


def test_budget_rules():
    s = WorkflowState(3, KEY, KEY, env_steps=100, episodes=7)
    assert Budget(iterations=3).met(s) and not Budget(iterations=4).met(s)
    assert Budget(env_steps=100).met(s) and Budget(episodes=5).met(s)
    assert Budget().met(s)


@pytest.mark.parametrize("k,c", [(5, 2), (6, 3), (4, 0)])
def test_record_count_per_eval_cadence(k, c):
    wf = _wf("es")
    records, finals = [], []
    learn(wf, wf.init(1), Budget(iterations=k), eval_every=c, eval_episodes=2, on_record=records.append,
          on_checkpoint=lambda s, final: finals.append(final))
    assert len(records) == k + (k // c if c else 0)
    assert finals == [True]


@pytest.mark.parametrize("name", ["es", "ppo", "td3", "erl", "cemrl", "pbt", "pbt-cso"])
def test_counters_monotone_and_deterministic(name):
    wf = _wf(name)
    a = wf.init(3)
    b = wf.init(3)
    ra, rb = [], []
    a = learn(wf, a, Budget(iterations=3), on_record=ra.append)
    b = learn(wf, b, Budget(iterations=3), on_record=rb.append)
    assert ra == rb
    steps = [r["env_steps"] for r in ra]
    assert steps == sorted(steps) and steps[0] > 0
    assert a.iteration == 3


def test_ppo_counts_env_steps_and_updates():
    wf = _wf("ppo")
    s = wf.init(0)
    s, m = wf.step(s)
    assert s.env_steps == 128
    # epochs * minibatches per epoch
    assert s.rl_updates == 4 * 2


def test_ppo_tunable_hp_reaches_update():
    wf = _wf("ppo")
    s = with_hp(wf.init(0), clip_eps=0.05, gamma=0.9)
    assert wf.hp(s).clip_eps == 0.05 and wf.hp(s).gamma == 0.9


def test_td3_random_phase_then_updates():
    wf = _wf("td3")
    s = wf.init(0)
    for _ in range(8):
        s, m = wf.step(s)
    # 8 transitions per iteration; updates start with the batch that reaches random_timesteps (40)
    assert s.env_steps == 64
    assert s.rl_updates == 64 - 40 + 8


def test_update_count_modes():
    assert rl_update_count("aligned", 123, 4096) == 123
    assert rl_update_count("fixed", 123, 4096) == 4096
    with pytest.raises(ValueError):
        rl_update_count("other", 1, 1)


@pytest.mark.parametrize("name", ["erl", "cemrl"])
def test_fixed_mode_accounting(name):
    wf = _wf(name, **{f"{name}.warmup_iters": 0, f"{name}.fixed_updates": 7})
    s = learn(wf, wf.init(0), Budget(iterations=4))
    assert s.rl_updates == 4 * 7


@pytest.mark.parametrize("name", ["erl", "cemrl"])
def test_aligned_mode_accounting(name):
    wf = _wf(name, **{f"{name}.warmup_iters": 1, f"{name}.update_mode": "aligned"})
    recs = []
    s = learn(wf, wf.init(0), Budget(iterations=3), on_record=recs.append)
    sampled = sum(r["timesteps_iter"] for r in recs[1:])
    assert s.rl_updates == sampled == sum(r["rl_updates_iter"] for r in recs)
    assert recs[0]["rl_updates_iter"] == 0


def test_erl_injects_rl_actor():
    wf = _wf("erl", **{"erl.warmup_iters": 0})
    s, _ = wf.step(wf.init(0))
    pop = s.data["population"]
    assert any(np.array_equal(row, s.data["agent"].actor) for row in pop)


def test_cemrl_rl_touches_half_the_population():
    wf = _wf("cemrl", **{"cemrl.warmup_iters": 0})
    s, m = wf.step(wf.init(0))
    assert len(m["rl_chosen"]) == 2 and len(set(m["rl_chosen"].tolist())) == 2


def test_es_evaluate_uses_center():
    wf = _wf("es")
    s = wf.init(0)
    rep = wf.evaluate(s, KEY, 3)
    assert rep.episodes == 3 and math.isfinite(rep.mean)


def test_pbt_rejects_untunable_search():
    cfg = Config({**SMALL["pbt"], "pbt.search": {"bogus": {"low": 0.1, "high": 1.0}}})
    with pytest.raises(ValueError):
        registry.build(cfg)


def test_pbt_members_carry_hypers_into_inner_state():
    wf = _wf("pbt")
    s = wf.init(0)
    for m in s.data["population"]:
        assert m.inner.hp == m.hypers
        assert wf.inner.hp(m.inner).clip_eps == m.hypers["clip_eps"]
    s2, metrics = wf.step(copy.deepcopy(s))
    assert metrics["meta/max"] >= metrics["meta/median"] >= metrics["meta/min"]
    assert s2.episodes > s.episodes


def test_synthetic_objective_peak():
    wf = registry.build(Config({"workflow": "synthetic", "synthetic.optimum": 0.2}))
    s = with_hp(wf.init(0), lr=0.2)
    assert wf.evaluate(s, KEY, 4).mean == 0.0
    s = with_hp(s, lr=0.2 * math.e)
    assert wf.evaluate(s, KEY, 4).mean == pytest.approx(-1.0)
