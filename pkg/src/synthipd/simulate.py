"""Ground-truth trial generators for validating the reconstruction pipeline.

Three mechanisms are provided, each with two binary covariates and a fair
coin for treatment:

* ``cox_ph``: constant hazard ``log(2)/10 * exp(log(.7) A + log(.5) X1 + log(.75) X2)``
  with ``X1, X2 ~ Bernoulli(0.3)``.
* ``aft``: ``log T = 0.8 A - 0.7 X1 + 0.5 X2 + N(0, 0.3^2)`` with
  ``X1 ~ Bernoulli(0.3)``, ``X2 ~ Bernoulli(0.4)``.
* ``crossover``: piecewise-constant baseline hazard changing at ``t0 = 5``
  (arm 0: 0.1 then 0.3, arm 1: 0.2 then 0.1) times
  ``exp(log(1.8) X1 + log(.5) X2)``, with ``X1, X2 ~ Bernoulli(0.3)``.

Censoring is exponential with a single rate per dataset, calibrated so the
expected censored fraction is 40%. The realized fraction is then forced into
``[0.3, 0.5]`` by redrawing censoring times.

Repetitions take their random streams from ``SeedSequence(seed).spawn(reps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import IpdDataset
from .errors import ConfigError, ConvergenceError

CASES = ("cox_ph", "aft", "crossover")
CASE_ALIASES = {"1": "cox_ph", "2": "aft", "3": "crossover"}

COVARIATE_PROBS = {"cox_ph": (0.3, 0.3), "aft": (0.3, 0.4), "crossover": (0.3, 0.3)}

LOG2_OVER_10 = math.log(2) / 10
CASE1_COEF = (math.log(0.7), math.log(0.5), math.log(0.75))
CASE2_COEF = (0.8, -0.7, 0.5)
CASE2_SIGMA = 0.3
CASE3_T0 = 5.0
CASE3_HAZARDS = {0: (0.1, 0.3), 1: (0.2, 0.1)}
CASE3_COEF = (math.log(1.8), math.log(0.5))

# joint label for the two binary covariates
LABEL_MAP = {x1 + 2 * x2: {"x1": x1, "x2": x2} for x1 in (0, 1) for x2 in (0, 1)}


def normalize_case(case) -> str:
    key = str(case)
    key = CASE_ALIASES.get(key, key)
    if key not in CASES:
        raise ConfigError(f"unknown simulation case {case!r}; expected one of {CASES} or 1/2/3")
    return key


@dataclass
class SimSpec:
    case: str
    n: int = 500
    covariate_probs: tuple[float, float] | None = None
    censor_range: tuple[float, float] = (0.3, 0.5)
    seed: int | np.random.SeedSequence | None = None

    def __post_init__(self):
        self.case = normalize_case(self.case)
        if self.n <= 0:
            raise ConfigError("n must be positive")
        if self.covariate_probs is None:
            self.covariate_probs = COVARIATE_PROBS[self.case]
        if not all(0 < p < 1 for p in self.covariate_probs):
            raise ConfigError("covariate probabilities must lie in (0, 1)")
        lo, hi = self.censor_range
        if not 0 < lo < hi < 1:
            raise ConfigError("censoring range must satisfy 0 < lo < hi < 1")


@dataclass
class SimulatedTrial:
    """A simulated trial with both covariates kept separately."""

    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    event_time: np.ndarray
    censor_time: np.ndarray
    censor_rate: float
    case: str
    meta: dict = field(default_factory=dict)

    @property
    def censored_fraction(self) -> float:
        return float(1.0 - self.event.mean())

    def labels(self, margin: str = "x1") -> tuple[np.ndarray, int]:
        if margin == "x1":
            return self.x1, 1
        if margin == "x2":
            return self.x2, 1
        if margin in ("joint", "x1x2"):
            return self.x1 + 2 * self.x2, 3
        raise ConfigError(f"unknown margin {margin!r}; use x1, x2 or joint")

    def dataset(self, margin: str = "x1") -> IpdDataset:
        cov, k_max = self.labels(margin)
        return IpdDataset(self.time, self.event, self.arm, cov, k_max=k_max)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _design(spec: SimSpec, rng):
    arm = rng.integers(0, 2, size=spec.n)
    p1, p2 = spec.covariate_probs
    x1 = (rng.random(spec.n) < p1).astype(np.int64)
    x2 = (rng.random(spec.n) < p2).astype(np.int64)
    return arm, x1, x2


def case1_rate(arm, x1, x2):
    b_a, b_1, b_2 = CASE1_COEF
    return LOG2_OVER_10 * np.exp(b_a * arm + b_1 * x1 + b_2 * x2)


def case2_location(arm, x1, x2):
    b_a, b_1, b_2 = CASE2_COEF
    return b_a * arm + b_1 * x1 + b_2 * x2


def case3_multiplier(x1, x2):
    return np.exp(CASE3_COEF[0] * x1 + CASE3_COEF[1] * x2)


def case3_invert(arm, x1, x2, unit_exp):
    """Solve Lambda(t) = E for the piecewise-constant cumulative hazard."""
    arm = np.asarray(arm)
    mult = case3_multiplier(np.asarray(x1), np.asarray(x2))
    h_early = np.where(arm == 1, CASE3_HAZARDS[1][0], CASE3_HAZARDS[0][0]) * mult
    h_late = np.where(arm == 1, CASE3_HAZARDS[1][1], CASE3_HAZARDS[0][1]) * mult
    at_t0 = h_early * CASE3_T0
    return np.where(unit_exp < at_t0, unit_exp / h_early, CASE3_T0 + (unit_exp - at_t0) / h_late)


def event_times(case: str, arm, x1, x2, rng) -> np.ndarray:
    case = normalize_case(case)
    n = np.asarray(arm).size
    if case == "cox_ph":
        return rng.exponential(1.0, size=n) / case1_rate(arm, x1, x2)
    if case == "aft":
        return np.exp(case2_location(arm, x1, x2) + rng.normal(0.0, CASE2_SIGMA, size=n))
    return case3_invert(arm, x1, x2, rng.exponential(1.0, size=n))


def expected_censored_fraction(event_times_, rate: float) -> float:
    """Mean of P(C < T_i) for C ~ Exp(rate) over the given event times."""
    return float(np.mean(-np.expm1(-rate * np.asarray(event_times_))))


def calibrate_censoring(event_times_, target: float = 0.4, max_iter: int = 100, tol: float = 1e-10) -> float:
    """Exponential censoring rate whose expected censored fraction is ``target``.

    Bisection on the rate; the expected fraction is averaged over the given
    event times using the exact conditional probability ``1 - exp(-rate T)``.
    """
    t = np.asarray(event_times_, dtype=float)
    if t.size == 0:
        raise ValueError("need at least one event time")
    if not 0 < target < 1:
        raise ValueError("target fraction must lie in (0, 1)")
    lo, hi = 0.0, 1.0 / float(np.mean(t))
    while expected_censored_fraction(t, hi) < target:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gap = expected_censored_fraction(t, mid) - target
        if abs(gap) < tol:
            return mid
        if gap < 0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"censoring calibration did not converge in {max_iter} iterations")


def apply_censoring(event_times_, rate: float, rng, censor_range=(0.3, 0.5), max_draws: int = 1000):
    """Draw exponential censoring times, redrawing until the realized
    censored fraction falls inside ``censor_range``."""
    t = np.asarray(event_times_, dtype=float)
    lo, hi = censor_range
    for _ in range(max_draws):
        c = rng.exponential(1.0 / rate, size=t.size)
        frac = float(np.mean(c < t))
        if lo <= frac <= hi:
            return c
    raise ConvergenceError(f"no censoring draw within {censor_range} after {max_draws} attempts")


def generate(spec: SimSpec, rng=None) -> SimulatedTrial:
    rng = _rng(spec.seed if rng is None else rng)
    arm, x1, x2 = _design(spec, rng)
    t = event_times(spec.case, arm, x1, x2, rng)
    lo, hi = spec.censor_range
    rate = calibrate_censoring(t, target=0.5 * (lo + hi))
    c = apply_censoring(t, rate, rng, spec.censor_range)
    event = t <= c
    observed = np.where(event, t, c)
    return SimulatedTrial(observed, event, arm, x1, x2, t, c, rate, spec.case)


def gen_case1(spec: SimSpec, rng=None) -> SimulatedTrial:
    if spec.case != "cox_ph":
        raise ConfigError("gen_case1 expects case cox_ph")
    return generate(spec, rng)


def gen_case2(spec: SimSpec, rng=None) -> SimulatedTrial:
    if spec.case != "aft":
        raise ConfigError("gen_case2 expects case aft")
    return generate(spec, rng)


def gen_case3(spec: SimSpec, rng=None) -> SimulatedTrial:
    if spec.case != "crossover":
        raise ConfigError("gen_case3 expects case crossover")
    return generate(spec, rng)


def repetition_seeds(seed, reps: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(reps)


def simulate_many(case, n: int, reps: int, seed) -> list[SimulatedTrial]:
    trials = []
    for child in repetition_seeds(seed, reps):
        trials.append(generate(SimSpec(case, n=n), np.random.default_rng(child)))
    return trials


def analytic_survival(case: str, t, arm: int, x1: int, x2: int):
    """Closed-form S(t | A, X1, X2) of the event-time distribution."""
    from scipy.stats import norm

    case = normalize_case(case)
    t = np.asarray(t, dtype=float)
    if case == "cox_ph":
        return np.exp(-case1_rate(arm, x1, x2) * t)
    if case == "aft":
        with np.errstate(divide="ignore"):
            z = (np.log(t) - case2_location(arm, x1, x2)) / CASE2_SIGMA
        return norm.sf(z)
    mult = case3_multiplier(x1, x2)
    h_early, h_late = CASE3_HAZARDS[arm]
    cum = np.where(t < CASE3_T0, h_early * t, h_early * CASE3_T0 + h_late * (t - CASE3_T0))
    return np.exp(-mult * cum)
