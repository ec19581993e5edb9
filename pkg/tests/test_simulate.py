import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from synthipd import km_fit, km_median
from synthipd import simulate as sim
from synthipd.errors import ConfigError


def test_case1_cell_medians():
    assert math.log(2) / sim.case1_rate(0, 0, 0) == pytest.approx(10.0)
    assert math.log(2) / sim.case1_rate(1, 1, 0) == pytest.approx(10 / 0.35)


def test_case2_cell_medians():
    assert float(np.exp(sim.case2_location(0, 0, 0))) == 1.0
    assert float(np.exp(sim.case2_location(1, 0, 0))) == pytest.approx(2.2255, abs=1e-4)


def test_case2_sample_median_monte_carlo():
    rng = np.random.default_rng(5)
    n = 200_000
    arm, x1, x2 = np.ones(n, int), np.zeros(n, int), np.ones(n, int)
    t = sim.event_times("aft", arm, x1, x2, rng)
    assert np.median(t) == pytest.approx(math.exp(0.8 + 0.5), rel=0.01)


def test_case3_survival_at_t0():
    assert sim.analytic_survival(3, 5.0, 0, 0, 0) == pytest.approx(math.exp(-0.5))
    assert sim.analytic_survival(3, 5.0, 1, 0, 0) == pytest.approx(math.exp(-1.0))


def test_case3_arms_cross_near_t0():
    spec = sim.SimSpec(3, n=1)
    p1, p2 = spec.covariate_probs

    def marginal(t, a):
        return sum(
            (p1 if x1 else 1 - p1) * (p2 if x2 else 1 - p2) * sim.analytic_survival(3, t, a, x1, x2)
            for x1 in (0, 1)
            for x2 in (0, 1)
        )

    cross = brentq(lambda t: marginal(t, 0) - marginal(t, 1), 5.01, 40.0)
    assert 5.0 < cross < 15.0
    trial = sim.generate(sim.SimSpec(3, n=20000, seed=2))
    s0 = km_fit((trial.event_time[trial.arm == 0], np.ones((trial.arm == 0).sum(), bool)))
    s1 = km_fit((trial.event_time[trial.arm == 1], np.ones((trial.arm == 1).sum(), bool)))
    assert s0(3.0) > s1(3.0) and s0(cross + 5) < s1(cross + 5)


@pytest.mark.parametrize("case", sim.CASES)
def test_inversion_matches_analytic(case):
    rng = np.random.default_rng(11)
    n = 100_000
    for a in (0, 1):
        for x1 in (0, 1):
            for x2 in (0, 1):
                t = sim.event_times(case, np.full(n, a), np.full(n, x1), np.full(n, x2), rng)
                grid = np.quantile(t, np.linspace(0.03, 0.97, 20))
                emp = np.array([(t > g).mean() for g in grid])
                ref = sim.analytic_survival(case, grid, a, x1, x2)
                assert np.max(np.abs(emp - ref)) < 0.01


def test_calibration_closed_form():
    rho = sim.calibrate_censoring(np.ones(10), target=0.4)
    assert rho == pytest.approx(-math.log(0.6), abs=1e-8)


def test_calibration_monte_carlo_case1():
    rng = np.random.default_rng(3)
    n = 100_000
    arm, x1, x2 = rng.integers(0, 2, n), (rng.random(n) < 0.3).astype(int), (rng.random(n) < 0.3).astype(int)
    t = sim.event_times(1, arm, x1, x2, rng)
    rho = sim.calibrate_censoring(t)
    c = rng.exponential(1 / rho, n)
    assert abs((c < t).mean() - 0.4) < 0.02


@pytest.mark.parametrize("case", [1, 2, 3])
def test_realized_censoring_in_range(case):
    for trial in sim.simulate_many(case, 500, 10, seed=8):
        assert 0.3 <= trial.censored_fraction <= 0.5
        np.testing.assert_array_equal(trial.time, np.minimum(trial.event_time, trial.censor_time))


def test_reproducible():
    a = sim.generate(sim.SimSpec(1, n=200, seed=4))
    b = sim.generate(sim.SimSpec(1, n=200, seed=4))
    assert a.dataset("joint") == b.dataset("joint")


def test_case1_marginal_hr_covered():
    from synthipd import cox_fit

    hits = 0
    for trial in sim.simulate_many(1, 500, 10, seed=1):
        trip = cox_fit(trial.dataset("x1").without_covariate()).triple()
        hits += trip.lo95 < 0.7 < trip.hi95 or trip.lo95 < 0.75 < trip.hi95
    assert hits >= 7


def test_spec_validation():
    with pytest.raises(ConfigError):
        sim.SimSpec("weibull")
    with pytest.raises(ConfigError):
        sim.SimSpec(1, n=0)
    with pytest.raises(ConfigError):
        sim.SimSpec(1, covariate_probs=(0.0, 0.5))


def test_labels_and_margins():
    trial = sim.generate(sim.SimSpec(2, n=100, seed=0))
    joint, k = trial.labels("joint")
    assert k == 3 and np.array_equal(joint, trial.x1 + 2 * trial.x2)
    with pytest.raises(ConfigError):
        trial.labels("x3")
