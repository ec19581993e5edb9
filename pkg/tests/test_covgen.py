import json
import math
import warnings

import numpy as np
import pytest
from scipy.stats import chisquare

from synthipd import IpdDataset, SummaryTriple, summarize
from synthipd import simulate as sim
from synthipd.covgen import (
    AcceptanceFunction,
    AnnealConfig,
    CovGenChain,
    CovGenProblem,
    acceptance_fn,
    initial_assignment,
    loss_generic,
    loss_hr,
    loss_m,
    loss_report,
    propose_neighbor,
    run_covgen,
    run_covgen_multistart,
)
from synthipd.data import NE, SubgroupSummaryTable
from synthipd.errors import ConfigError, InfeasibleStartError

from covgen_oracle import brute_force_min, small_instance
from helpers import random_dataset


def _table(medians, hrs, k_max=0, counts=None):
    counts = counts or {c: 5 for c in medians}
    return SubgroupSummaryTable(k_max, counts, medians, hrs)


# losses


def test_loss_identity_on_random_data(rng):
    for _ in range(10):
        d = random_dataset(rng, 80, k_max=2)
        t = summarize(d, [5.0])
        assert loss_m(d, t).value == 0.0
        assert loss_hr(d, t).value == 0.0
        assert loss_generic(d, t, ("rate", 5.0)).value == 0.0


def test_loss_m_examples():
    tgt = _table({(0, 0): SummaryTriple(22.55, 16.37, 26.93), (0, 1): SummaryTriple(10, 8, 12)}, {})
    cand = _table({(0, 0): SummaryTriple(22.83, 16.37, 26.93), (0, 1): SummaryTriple(10, 8, 12)}, {})
    assert loss_m(cand, tgt).value == pytest.approx(0.28 / 22.55)
    cand = _table({(0, 0): SummaryTriple(22.55, 16.37, 26.93), (0, 1): SummaryTriple(10, 8, 15)}, {})
    assert loss_m(cand, tgt).value == pytest.approx(0.25)


def test_loss_hr_examples():
    tgt = _table({}, {0: SummaryTriple(0.21, 0.16, 0.26)})
    cand = _table({}, {0: SummaryTriple(0.21, 0.16, 0.27)})
    assert loss_hr(cand, tgt).value == pytest.approx(0.01 / 0.26)
    tgt = _table({}, {0: SummaryTriple(1.0, 0.5, 2.0), 1: SummaryTriple(2.0, 1.0, 4.0)}, k_max=1)
    cand = _table({}, {0: SummaryTriple(1.0, 0.5, 2.0), 1: SummaryTriple(2.2, 1.0, 4.0)}, k_max=1)
    assert loss_hr(cand, tgt).value == pytest.approx(0.10)


def test_not_estimable_components():
    tgt = _table({(0, 0): SummaryTriple(10, 8, NE)}, {})
    assert loss_m(_table({(0, 0): SummaryTriple(10, 8, NE)}, {}), tgt).value == 0.0
    assert loss_m(_table({(0, 0): SummaryTriple(10, 8, 20)}, {}), tgt).value == 1.0
    assert loss_m(_table({(0, 0): SummaryTriple(10, 8, 20)}, {}), tgt, penalty=0.3).value == 0.3


def test_zero_target_excluded_with_warning():
    tgt = _table({}, {0: SummaryTriple(0.0, 0.0, 2.0)})
    cand = _table({}, {0: SummaryTriple(0.1, 0.0, 2.2)})
    with pytest.warns(UserWarning, match="excluded"):
        part = loss_hr(cand, tgt)
    assert part.value == pytest.approx(0.1)
    assert part.components[0][0] is None


def test_survival_rate_loss_hand_computed():
    time = np.array([1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0])
    event = np.ones(8, bool)
    arm = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    d = IpdDataset(time, event, arm, np.zeros(8, int), k_max=0)
    t = summarize(d, [2.5])
    assert t.rates[2.5][(0, 0)].estimate == pytest.approx(0.5)
    cand = IpdDataset(np.array([1.0, 2.0, 3.0, 4.0, 1.0, 3.0, 3.0, 4.0]), event, arm, np.zeros(8, int), k_max=0)
    # arm-1 candidate S(2.5) = 0.75 vs 0.5
    assert loss_generic(cand, t, "rate:2.5").components[(0, 1)][0] == pytest.approx(0.5)


# acceptance functions


def test_acceptance_examples():
    f = AcceptanceFunction("exp_decay")
    assert f(3.0, 3) == pytest.approx(math.exp(-1))
    assert f(0.5, 0) == 0.0
    assert AcceptanceFunction("zero")(1.0, 10) == 0.0
    with pytest.raises(ConfigError):
        AcceptanceFunction("cauchy")


def test_acceptance_limit_checks():
    assert all(acceptance_fn("exp_product").check_limits().values())
    assert all(acceptance_fn("zero").check_limits().values())
    with pytest.warns(UserWarning, match="gamma"):
        fn = acceptance_fn("exp_decay")
    checks = fn.check_limits()
    assert checks["delta"] and not checks["gamma"]


# config


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        AnnealConfig(swap_lo=10, swap_hi=5)
    with pytest.raises(ConfigError):
        AnnealConfig(hr_ceiling=1.5)
    with pytest.raises(ConfigError):
        AnnealConfig.from_json({"bogus": 1})
    cfg = AnnealConfig.from_json({"max_iters": 10, "f": {"family": "zero"}, "seed": 3})
    assert cfg.acceptance.family == "zero"
    again = AnnealConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg


# initial assignment and proposals


def test_initial_assignment_single_class(rng):
    lab = initial_assignment(np.array([0, 1, 1, 0]), {(0, 0): 2, (0, 1): 2}, rng)
    assert np.all(lab == 0)


def test_initial_assignment_count_mismatch(rng):
    with pytest.raises(ConfigError):
        initial_assignment(np.array([0, 1, 1]), {(0, 0): 2, (0, 1): 2}, rng)


def test_initial_assignment_uniform(rng):
    arm = np.array([0, 0, 1, 1])
    counts = {(0, 0): 1, (1, 0): 1, (0, 1): 1, (1, 1): 1}
    seen = {}
    for _ in range(10_000):
        key = tuple(initial_assignment(arm, counts, rng))
        seen[key] = seen.get(key, 0) + 1
    assert len(seen) == 4
    assert chisquare(list(seen.values())).pvalue > 1e-3


def test_propose_preserves_counts(rng):
    arm = rng.integers(0, 2, 200)
    label = rng.integers(0, 3, 200)
    for _ in range(10_000 // 10):
        cand, pairs = propose_neighbor(label, arm, rng.uniform(1, 20), rng)
        for a in (0, 1):
            assert np.array_equal(np.bincount(cand[arm == a], minlength=3), np.bincount(label[arm == a], minlength=3))
        assert np.all(arm[pairs[:, 0]] == arm[pairs[:, 1]])
        assert np.all(label[pairs[:, 0]] != label[pairs[:, 1]])
        assert len(np.unique(pairs)) == pairs.size
        label = cand


def test_propose_small_and_degenerate(rng):
    cand, pairs = propose_neighbor(np.array([0, 0, 1, 1]), np.zeros(4, int), 50.0, rng)
    assert len(pairs) == 1 and sorted(cand) == [0, 0, 1, 1]
    cand, pairs = propose_neighbor(np.zeros(6, int), np.array([0, 0, 0, 1, 1, 1]), 20.0, rng)
    assert len(pairs) == 0 and np.all(cand == 0)


# the chain


def _case1(seed=1, n=300):
    trial = sim.generate(sim.SimSpec(1, n=n, seed=seed))
    d = trial.dataset("x1")
    return d, summarize(d)


def test_start_at_truth_returns_immediately():
    d, t = _case1()
    res = run_covgen(d.without_covariate(), t, AnnealConfig(max_iters=1000, seed=0), initial=d.covariate)
    assert res.iterations == 0 and res.stop_reason == "exact"
    assert res.loss_m == 0.0 and res.loss_hr == 0.0
    assert np.array_equal(res.assignment, d.covariate)


def test_cached_stats_equal_full_recompute():
    d, t = _case1(n=200)
    problem = CovGenProblem(d.without_covariate(), t, extra_rates=())
    chain = CovGenChain(problem, AnnealConfig(seed=5, swap_lo=1, swap_hi=5))
    for _ in range(300):
        chain.step()
        full = problem.compute(chain.label, problem.empty_stats())
        for cached, fresh in zip(chain.stats, full):
            np.testing.assert_array_equal(cached, fresh)


def test_chain_losses_match_public_losses():
    d, t = _case1(n=200)
    res = run_covgen(d.without_covariate(), t, AnnealConfig(max_iters=300, seed=2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = loss_report(d.with_covariate(res.assignment, 1), t)
    assert rep.loss_m == pytest.approx(res.loss_m, abs=1e-9)
    assert rep.loss_hr == pytest.approx(res.loss_hr, abs=1e-9)


@pytest.mark.parametrize("mode", ["fixed", "running", "initial"])
def test_invariants_over_steps(mode):
    d, t = _case1(n=200)
    problem = CovGenProblem(d.without_covariate(), t)
    for family in ("zero", "exp_decay"):
        cfg = AnnealConfig(seed=9, hr_ceiling=0.2, swap_lo=1, swap_hi=10, acceptance={"family": family},
                           ceiling_mode=mode)
        chain = CovGenChain(problem, cfg)
        init_hr = chain.loss_hr
        prev = (chain.loss_m, chain.loss_hr)
        gamma = 0
        for _ in range(1500):
            rec = chain.step()
            if rec.branch == "iv":
                assert not rec.accepted
            if rec.accepted:
                assert rec.branch in ("i", "ii", "iii")
                assert rec.loss_hr <= max(cfg.hr_ceiling, init_hr)
                gamma += rec.branch in ("i", "ii")
                cur = (rec.loss_m, rec.loss_hr)
                if family == "zero":
                    assert cur <= prev
                prev = cur
            assert rec.gamma == gamma <= rec.iter
        for (x, a), n in problem.counts.items():
            assert np.sum((chain.label == x) & (problem.arm == a)) == n


def test_running_ceiling_escapes_high_start():
    d, t = _case1(n=200)
    kw = dict(max_iters=3000, seed=4, hr_ceiling=0.001, swap_lo=0.5, swap_hi=4, acceptance="zero")
    fixed = run_covgen(d.without_covariate(), t, AnnealConfig(**kw))
    running = run_covgen(d.without_covariate(), t, AnnealConfig(ceiling_mode="running", **kw))
    assert running.loss_hr <= fixed.trace[0][2]
    assert running.loss_m < fixed.loss_m
    initial = run_covgen(d.without_covariate(), t, AnnealConfig(ceiling_mode="initial", trace_every=1, **kw))
    assert initial.loss_m < fixed.loss_m
    assert max(row[2] for row in initial.trace if row[4]) <= initial.trace[0][2]
    with pytest.raises(ConfigError):
        AnnealConfig(ceiling_mode="loose")


def test_determinism():
    d, t = _case1(n=200)
    cfg = AnnealConfig(max_iters=400, seed=11, trace_every=1)
    a = run_covgen(d.without_covariate(), t, cfg)
    b = run_covgen(d.without_covariate(), t, cfg)
    assert a.trace == b.trace and np.array_equal(a.assignment, b.assignment)
    assert a.trace_csv() == b.trace_csv()
    assert a.trace_csv().splitlines()[0] == "iter,loss_m,loss_hr,gamma,accepted,branch"


def test_tolerance_stop():
    d, t = _case1(n=200)
    res = run_covgen(d.without_covariate(), t, AnnealConfig(max_iters=20000, seed=1, stop_tol_m=0.5, hr_ceiling=0.5))
    assert res.stop_reason == "tolerance" and res.iterations < 20000
    assert res.loss_m <= 0.5 and res.loss_hr <= 0.5


def test_extra_rates_join_objective():
    d, _ = _case1(n=200)
    t = summarize(d, [12.0])
    res = run_covgen(d.without_covariate(), t, AnnealConfig(max_iters=200, seed=1), extra_rates=[12.0])
    assert "rate:12" in res.report.extra
    assert res.report.to_json()["schema"] == 1
    with pytest.raises(ConfigError):
        run_covgen(d.without_covariate(), t, AnnealConfig(max_iters=10), extra_rates=[7.0])


def test_count_mismatch_rejected():
    d, t = _case1(n=200)
    with pytest.raises(ConfigError):
        run_covgen(d.subset(np.arange(len(d)) > 0).without_covariate(), t, AnnealConfig(max_iters=10))


def test_infeasible_start_diagnostics():
    # one event per arm overall: any subgroup without both arms' events has no HR
    time = np.arange(1.0, 9.0)
    event = np.array([1, 0, 0, 0, 1, 0, 0, 0], bool)
    arm = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    cov = np.array([0, 1, 1, 1, 0, 1, 1, 1])
    d = IpdDataset(time, event, arm, cov, k_max=1)
    tgt = SubgroupSummaryTable(
        1, d.counts(), {c: SummaryTriple(1.0) for c in d.counts()},
        {0: SummaryTriple(1.0, 0.5, 2.0), 1: SummaryTriple(1.0, 0.5, 2.0)},
    )
    with pytest.raises(InfeasibleStartError) as err:
        run_covgen(d.without_covariate(), tgt, AnnealConfig(max_iters=10, seed=0, max_restarts=3))
    assert len(err.value.diagnostics["attempt_losses"]) == 4
    assert 1 in err.value.diagnostics["hr_not_estimable"]


def test_small_instance_global_minimum(rng):
    hits = 0
    for _ in range(3):
        d, t = small_instance(rng)
        best = brute_force_min(d, t, 0.01)
        cfg = AnnealConfig(max_iters=1500, seed=int(rng.integers(1 << 30)), swap_lo=5, swap_hi=20,
                           acceptance="zero", hr_ceiling=0.01, stop_tol_m=1e-12)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_covgen_multistart(d.without_covariate(), t, cfg, starts=8)
        hits += res.loss_hr <= 0.01 and abs(res.loss_m - best) <= 1e-9
    assert hits >= 2
