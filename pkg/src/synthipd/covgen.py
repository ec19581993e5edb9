"""Covariate assignment by constrained stochastic local search.

Given covariate-free records and a published subgroup table, search for a
label vector with the published subgroup sizes ``n_{x,a}`` whose subgroup
medians match the table as closely as possible (max relative absolute error
``L_m``) while the subgroup hazard ratios stay within a ceiling ``H`` of the
table (max relative absolute error ``L_HR``).

Each iteration swaps the labels of a random number of same-arm record pairs
and applies a four-way acceptance rule:

1. ``L_m`` falls and ``L_HR < H``: accept, count an improvement.
2. ``L_m`` ties and ``L_HR`` falls: accept, count an improvement.
3. ``L_m`` rises and ``L_HR <= H``: accept with probability ``f(delta, gamma)``.
4. ``L_HR >= H``: reject.

``gamma`` is the improvement counter, so ``f`` can shrink uphill moves as
the search settles.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as kern
from .data import SCHEMA_VERSION, IpdDataset, SubgroupSummaryTable
from .errors import ConfigError, InfeasibleStartError
from .survival import summarize

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# acceptance functions


def _exp_decay(delta: float, gamma: int, scale: float = 1.0) -> float:
    if gamma <= 0:
        return 0.0
    return math.exp(-delta / (scale * gamma))


def _exp_product(delta: float, gamma: int, scale: float = 1.0) -> float:
    return math.exp(-delta * gamma / scale)


def _zero(delta: float, gamma: int) -> float:
    return 0.0


ACCEPTANCE_FAMILIES: dict[str, Callable[..., float]] = {
    "exp_decay": _exp_decay,
    "exp_product": _exp_product,
    "zero": _zero,
}


@dataclass(frozen=True)
class AcceptanceFunction:
    """Probability of taking an uphill step of size ``delta`` after ``gamma``
    improvements.

    ``exp_decay`` is ``exp(-delta / (scale * gamma))`` with ``f(., 0) = 0``;
    ``exp_product`` is ``exp(-delta * gamma / scale)``; ``zero`` never accepts, which turns the search into randomized local
    search.
    """

    family: str = "exp_decay"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in ACCEPTANCE_FAMILIES:
            raise ConfigError(
                f"unknown acceptance family {self.family!r}; expected one of {sorted(ACCEPTANCE_FAMILIES)}"
            )

    def __call__(self, delta: float, gamma: int) -> float:
        if not delta > 0:
            raise ValueError("delta must be positive")
        return ACCEPTANCE_FAMILIES[self.family](delta, gamma, **self.params)

    def check_limits(self, tol: float = 1e-6) -> dict:
        """Numerically check that f decreases to 0 along delta and gamma grids.

        Returns ``{"delta": bool, "gamma": bool, "range": bool}``.
        """
        deltas = np.logspace(-4, 6, 50)
        gammas = np.unique(np.logspace(0, 7, 40).astype(int))

        def vanishes(vals):
            return not np.any(np.diff(vals) > 1e-15) and vals[-1] <= tol

        along_delta = all(vanishes([self(d, g) for d in deltas]) for g in (1, 10, 1000))
        along_gamma = all(vanishes([self(d, g) for g in gammas]) for d in (1e-3, 0.1, 1.0))
        in_range = all(0.0 <= self(d, g) <= 1.0 for d in deltas for g in gammas[:10])
        return {"delta": along_delta, "gamma": along_gamma, "range": in_range}

    def to_json(self) -> dict:
        return {"family": self.family, **self.params}

    @classmethod
    def from_json(cls, obj) -> "AcceptanceFunction":
        if isinstance(obj, str):
            return cls(obj)
        obj = dict(obj)
        family = obj.pop("family", None)
        if family is None:
            raise ConfigError("acceptance function needs a 'family' field")
        return cls(family, obj)


def acceptance_fn(family: str, **params) -> AcceptanceFunction:
    """Build an acceptance function, warning when it fails a limit check.

    ``exp_decay`` tends to 1, not 0, as ``gamma`` grows, so it warns; it is
    kept because it is the customary default. ``exp_product`` vanishes along
    both arguments.
    """
    fn = AcceptanceFunction(family, params)
    checks = fn.check_limits()
    if not checks["range"]:
        raise ConfigError(f"acceptance family {family!r} leaves [0, 1]")
    failed = [k for k in ("delta", "gamma") if not checks[k]]
    if failed:
        warnings.warn(f"acceptance family {family!r} does not vanish along {' and '.join(failed)}", stacklevel=2)
    return fn


# --------------------------------------------------------------------------
# configuration


CEILING_MODES = ("fixed", "running", "initial")


@dataclass
class AnnealConfig:
    """Hyper-parameters of the covariate search.

    ``swap_lo`` and ``swap_hi`` are percentages of the records whose labels
    are exchanged per step. ``stop_tol_m`` / ``stop_tol_hr`` end the run early
    once every configured threshold holds; when only ``stop_tol_m`` is given
    the hazard-ratio loss must also be at or below ``hr_ceiling``.

    ``ceiling_mode`` "fixed" compares candidates against ``hr_ceiling``
    itself. "running" uses ``max(hr_ceiling, current L_HR)``, so a chain that
    starts above the ceiling can improve ``L_m`` without ever letting the
    hazard-ratio loss grow. "initial" uses ``max(hr_ceiling, L_HR at the
    start)`` for the whole run, which leaves room to fit the medians first
    while branch (ii) and the stopping rule pull ``L_HR`` back under the
    ceiling.
    """

    max_iters: int = 1_000_000
    hr_ceiling: float = 0.01
    swap_lo: float = 1.0
    swap_hi: float = 20.0
    acceptance: AcceptanceFunction = field(default_factory=AcceptanceFunction)
    stop_tol_m: float | None = None
    stop_tol_hr: float | None = None
    seed: int | None = None
    ne_penalty: float = 1.0
    max_restarts: int = 20
    trace_every: int = 1000
    adaptive_swaps: bool = False
    ceiling_mode: str = "fixed"

    def __post_init__(self):
        if isinstance(self.acceptance, (str, dict)):
            self.acceptance = AcceptanceFunction.from_json(self.acceptance)
        if int(self.max_iters) < 1:
            raise ConfigError("max_iters must be a positive integer")
        self.max_iters = int(self.max_iters)
        if not 0 < self.swap_lo <= self.swap_hi <= 100:
            raise ConfigError("swap percentages need 0 < swap_lo <= swap_hi <= 100")
        if self.ne_penalty < 0:
            raise ConfigError("ne_penalty must be non-negative")
        for name in ("hr_ceiling", "stop_tol_m", "stop_tol_hr"):
            value = getattr(self, name)
            if value is not None and not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be at least 1")
        if self.ceiling_mode not in CEILING_MODES:
            raise ConfigError(f"ceiling_mode must be one of {CEILING_MODES}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["acceptance"] = self.acceptance.to_json()
        return {"schema": SCHEMA_VERSION, **out}

    @classmethod
    def from_json(cls, obj: dict) -> "AnnealConfig":
        obj = dict(obj)
        schema = obj.pop("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported anneal config schema {schema!r}")
        if "f" in obj and "acceptance" not in obj:
            obj["acceptance"] = obj.pop("f")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown anneal config field(s): {', '.join(sorted(unknown))}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "AnnealConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# losses on datasets


@dataclass
class LossPart:
    """Relative absolute errors per statistic and their maximum.

    ``components`` maps a cell key to the errors for (estimate, lo95, hi95);
    ``None`` marks a component left out because the target is zero.
    """

    components: dict
    value: float


def _rae_triplet(cand: np.ndarray, target: np.ndarray, penalty: float) -> list:
    out = []
    for c, t in zip(cand, target):
        if not math.isnan(t) and t == 0.0:
            out.append(None)
        elif math.isnan(t):
            out.append(0.0 if math.isnan(c) else penalty)
        elif math.isnan(c):
            out.append(penalty)
        else:
            out.append(abs(t - c) / abs(t))
    return out


def _loss_part(cand_arrays: dict, target_arrays: dict, penalty: float) -> LossPart:
    comps, worst, dropped = {}, 0.0, []
    for key, target in target_arrays.items():
        row = _rae_triplet(cand_arrays[key], target, penalty)
        comps[key] = row
        dropped += [key for v in row if v is None]
        worst = max([worst] + [v for v in row if v is not None])
    if dropped:
        warnings.warn(f"zero-valued target components excluded from loss: {sorted(set(dropped))}", stacklevel=3)
    return LossPart(comps, worst)


def _median_arrays(table: SubgroupSummaryTable) -> dict:
    return {c: table.medians[c].as_array() for c in table.cells() if c in table.medians}


def _hr_arrays(table: SubgroupSummaryTable) -> dict:
    return {x: table.hazard_ratios[x].as_array() for x in range(table.k_max + 1) if x in table.hazard_ratios}


def _rate_arrays(table: SubgroupSummaryTable, t: float) -> dict:
    return {c: trip.as_array() for c, trip in table.rates[t].items()}


def _candidate_table(candidate, target: SubgroupSummaryTable, timepoints=()) -> SubgroupSummaryTable:
    if isinstance(candidate, SubgroupSummaryTable):
        return candidate
    if candidate.covariate is None:
        raise ValueError("candidate dataset has no covariate")
    data = candidate if candidate.k_max >= target.k_max else candidate.with_covariate(candidate.covariate, target.k_max)
    return summarize(data, timepoints)


def loss_m(candidate, target: SubgroupSummaryTable, penalty: float = 1.0) -> LossPart:
    """Max RAE over the median triples of every ``(x, a)`` cell."""
    table = _candidate_table(candidate, target)
    return _loss_part(_median_arrays(table), _median_arrays(target), penalty)


def loss_hr(candidate, target: SubgroupSummaryTable, penalty: float = 1.0) -> LossPart:
    """Max RAE over the hazard-ratio triples of every subgroup."""
    table = _candidate_table(candidate, target)
    return _loss_part(_hr_arrays(table), _hr_arrays(target), penalty)


def parse_statistic(statistic) -> tuple[str, float | None]:
    """Accepts ``"median"``, ``"hr"``, ``("rate", t)`` or ``"rate:t"``."""
    if isinstance(statistic, tuple):
        name, t = statistic
        return name, float(t)
    if isinstance(statistic, str) and statistic.startswith("rate:"):
        return "rate", float(statistic.split(":", 1)[1])
    if statistic in ("median", "hr"):
        return statistic, None
    raise ConfigError(f"unknown statistic {statistic!r}")


def loss_generic(candidate, target: SubgroupSummaryTable, statistic, penalty: float = 1.0) -> LossPart:
    """Max RAE for medians, hazard ratios or survival rates at a timepoint."""
    name, t = parse_statistic(statistic)
    if name == "median":
        return loss_m(candidate, target, penalty)
    if name == "hr":
        return loss_hr(candidate, target, penalty)
    if t not in target.rates:
        raise ConfigError(f"target table has no survival rates at t={t}")
    table = _candidate_table(candidate, target, timepoints=[t])
    return _loss_part(_rate_arrays(table, t), _rate_arrays(target, t), penalty)


@dataclass
class LossReport:
    loss_m: float
    loss_hr: float
    median_components: dict
    hr_components: dict
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def cells(comps):
            return [{"x": k[0], "a": k[1], "rae": v} for k, v in sorted(comps.items())]

        return {
            "schema": SCHEMA_VERSION,
            "loss_m": self.loss_m,
            "loss_hr": self.loss_hr,
            "median_components": cells(self.median_components),
            "hr_components": [{"x": k, "rae": v} for k, v in sorted(self.hr_components.items())],
            "extra": {
                name: {"loss": part["loss"], "components": cells(part["components"])}
                for name, part in self.extra.items()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def loss_report(candidate: IpdDataset, target: SubgroupSummaryTable, extra_rates=(), penalty: float = 1.0) -> LossReport:
    """All losses of a labelled dataset against a target table."""
    table = _candidate_table(candidate, target, timepoints=list(extra_rates))
    lm = loss_m(table, target, penalty)
    lh = loss_hr(table, target, penalty)
    extra = {}
    for t in extra_rates:
        part = _loss_part(_rate_arrays(table, t), _rate_arrays(target, t), penalty)
        extra[f"rate:{t:g}"] = {"loss": part.value, "components": part.components}
    return LossReport(lm.value, lh.value, lm.components, lh.components, extra)


# --------------------------------------------------------------------------
# initial assignment and proposals


def initial_assignment(arm, counts: dict, rng, k_max: int | None = None) -> np.ndarray:
    """Random labels with exactly ``counts[(x, a)]`` records per cell.

    Within each arm the labels are a uniform random permutation of the
    multiset fixed by the counts.
    """
    arm = np.asarray(arm)
    if k_max is None:
        k_max = max(x for x, _ in counts)
    labels = np.empty(arm.size, dtype=np.int64)
    for a in (0, 1):
        idx = np.flatnonzero(arm == a)
        pool = np.repeat(np.arange(k_max + 1), [counts.get((x, a), 0) for x in range(k_max + 1)])
        if pool.size != idx.size:
            raise ConfigError(
                f"subgroup counts for arm {a} sum to {pool.size} but the data hold {idx.size} records"
            )
        labels[idx] = rng.permutation(pool)
    return labels


def swap_count(alpha: float, n: int) -> int:
    """Number of label pairs exchanged for a swap percentage ``alpha``."""
    return int(math.ceil(alpha / 100.0 * n / 2.0))


def propose_neighbor(label, arm, alpha: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Swap labels of ``ceil(alpha% * n / 2)`` disjoint same-arm pairs.

    Only pairs with different labels are swapped, so every ``n_{x,a}`` is
    preserved. Returns the new labels and the swapped index pairs.
    """
    label = np.ascontiguousarray(label, dtype=np.int64)
    arm = np.ascontiguousarray(arm, dtype=np.int64)
    n = label.size
    out = np.empty_like(label)
    pairs = np.empty((max(n // 2, 1), 2), dtype=np.int64)
    perm = rng.permutation(n)
    count = kern.propose_swaps(label, arm, perm, swap_count(alpha, n), out, pairs)
    return out, pairs[:count]


# --------------------------------------------------------------------------
# the search


class CovGenProblem:
    """Covariate-free data and target table in the layout the kernels need.

    Records are held in ascending time order; ``order`` maps back to the
    caller's order.
    """

    def __init__(self, data: IpdDataset, target: SubgroupSummaryTable, extra_rates=(), penalty: float = 1.0):
        if len(data) == 0:
            raise ConfigError("no records to assign covariates to")
        self.order = np.argsort(data.time, kind="stable")
        self.time = np.ascontiguousarray(data.time[self.order])
        self.event = np.ascontiguousarray(data.event[self.order])
        self.arm = np.ascontiguousarray(data.arm[self.order].astype(np.int64))
        self.arm_f = self.arm.astype(float)
        self.n = len(data)
        self.k_max = target.k_max
        self.target = target
        self.penalty = float(penalty)
        self.counts = {c: int(target.counts.get(c, 0)) for c in target.cells()}
        n0, n1 = data.arm_sizes()
        for a, size in ((0, n0), (1, n1)):
            total = sum(self.counts[(x, a)] for x in range(self.k_max + 1))
            if total != size:
                raise ConfigError(f"target counts for arm {a} sum to {total}, data arm has {size} records")
        self.extra_rates = tuple(float(t) for t in extra_rates)
        for t in self.extra_rates:
            if t not in target.rates:
                raise ConfigError(f"target table has no survival rates at t={t}")
        self.rate_times = np.array(sorted(self.extra_rates), dtype=float)
        self._rate_pos = [int(np.searchsorted(self.rate_times, t)) for t in self.extra_rates]

        self.med_target = target.median_array().reshape(-1)
        self.hr_target = target.hr_array().reshape(-1)
        self.rate_target = (
            np.stack([target.rate_array(t) for t in self.rate_times], axis=2).reshape(-1)
            if self.rate_times.size
            else np.empty(0)
        )
        self.med_valid = self._valid(self.med_target, "median")
        self.hr_valid = self._valid(self.hr_target, "hazard ratio")
        self.rate_valid = self._valid(self.rate_target, "survival rate")

    @staticmethod
    def _valid(target, what):
        valid = ~(target == 0.0)
        if not valid.all():
            warnings.warn(f"{int((~valid).sum())} zero-valued {what} target component(s) excluded", stacklevel=3)
        return valid

    def empty_stats(self):
        k1 = self.k_max + 1
        return (
            np.full((k1, 2, 3), np.nan),
            np.full((k1, 2, self.rate_times.size, 3), np.nan),
            np.full((k1, 3), np.nan),
        )

    def compute(self, label, stats, touched_cell=None, touched_group=None):
        med, rates, hr = stats
        k1 = self.k_max + 1
        if touched_cell is None:
            touched_cell = np.ones((k1, 2), dtype=np.bool_)
            touched_group = np.ones(k1, dtype=np.bool_)
        kern.evaluate_cells(
            self.time, self.event, self.arm, self.arm_f, label, self.rate_times,
            touched_cell, touched_group, med, rates, hr,
        )
        return stats

    def losses(self, stats) -> tuple[float, float]:
        med, rates, hr = stats
        lm = kern.max_rae(med.reshape(-1), self.med_target, self.med_valid, self.penalty)
        if self.rate_times.size:
            lr = kern.max_rae(rates.reshape(-1), self.rate_target, self.rate_valid, self.penalty)
            lm = max(lm, lr)
        lh = kern.max_rae(hr.reshape(-1), self.hr_target, self.hr_valid, self.penalty)
        return lm, lh

    def hr_estimable(self, hr) -> bool:
        """True when no hazard-ratio component is missing where the target has one."""
        flat = hr.reshape(-1)
        return not np.any(np.isnan(flat) & ~np.isnan(self.hr_target))

    def to_caller_order(self, label_sorted) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        out[self.order] = label_sorted
        return out

    def to_sorted_order(self, label) -> np.ndarray:
        return np.ascontiguousarray(np.asarray(label, dtype=np.int64)[self.order])


@dataclass
class StepRecord:
    iter: int
    cand_loss_m: float
    cand_loss_hr: float
    branch: str
    accepted: bool
    loss_m: float
    loss_hr: float
    gamma: int
    n_swapped: int


TRACE_COLUMNS = ("iter", "loss_m", "loss_hr", "gamma", "accepted", "branch")


class CovGenChain:
    """One Markov chain of the covariate search.

    Call :meth:`step` repeatedly, or :meth:`run` to iterate until the
    configured budget or stopping thresholds are reached.
    """

    def __init__(self, problem: CovGenProblem, config: AnnealConfig, rng=None, initial=None):
        self.problem = problem
        self.config = config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self.gamma = 0
        self.iter = 0
        self.restarts = 0
        if initial is not None:
            label = problem.to_sorted_order(initial)
            self._check_counts(label)
            self._set_state(label)
        else:
            self._draw_start()
        self.initial_loss = (self.loss_m, self.loss_hr)
        self._cand_stats = problem.empty_stats()
        self._touched_cell = np.zeros((problem.k_max + 1, 2), dtype=np.bool_)
        self._touched_group = np.zeros(problem.k_max + 1, dtype=np.bool_)

    def _check_counts(self, label):
        p = self.problem
        for (x, a), n in p.counts.items():
            got = int(np.sum((label == x) & (p.arm == a)))
            if got != n:
                raise ConfigError(f"initial assignment has {got} records in cell ({x}, {a}), target {n}")

    def _set_state(self, label):
        self.label = np.ascontiguousarray(label, dtype=np.int64)
        self.stats = self.problem.compute(self.label, self.problem.empty_stats())
        self.loss_m, self.loss_hr = self.problem.losses(self.stats)

    def _draw_start(self):
        p = self.problem
        attempts = []
        for attempt in range(self.config.max_restarts + 1):
            label = initial_assignment(p.arm, p.counts, self.rng, p.k_max)
            self._set_state(label)
            attempts.append((self.loss_m, self.loss_hr))
            if p.hr_estimable(self.stats[2]):
                self.restarts = attempt
                return
        hr = self.stats[2]
        raise InfeasibleStartError(
            f"no initial assignment had every targeted hazard ratio estimable after {len(attempts)} draws",
            {
                "attempt_losses": attempts,
                "hr_not_estimable": [int(x) for x in np.flatnonzero(np.isnan(hr[:, 0]))],
                "counts": {f"{x},{a}": n for (x, a), n in p.counts.items()},
            },
        )

    def _swap_bounds(self):
        a, b = self.config.swap_lo, self.config.swap_hi
        tol = self.config.stop_tol_m
        if self.config.adaptive_swaps and tol is not None and self.loss_m < 2 * tol:
            b = a + (b - a) * min(1.0, max(0.0, (self.loss_m - tol) / tol))
        return a, b

    def propose(self):
        a, b = self._swap_bounds()
        alpha = self.rng.uniform(a, b)
        cand, pairs = propose_neighbor(self.label, self.problem.arm, alpha, self.rng)
        return cand, pairs

    def _evaluate(self, cand, pairs):
        tc, tg = self._touched_cell, self._touched_group
        tc[:] = False
        tg[:] = False
        if pairs.size:
            arms = self.problem.arm[pairs[:, 0]]
            for col in (0, 1):
                labs = self.label[pairs[:, col]]
                tc[labs, arms] = True
                tg[labs] = True
        for src, dst in zip(self.stats, self._cand_stats):
            np.copyto(dst, src)
        self.problem.compute(cand, self._cand_stats, tc, tg)
        return self.problem.losses(self._cand_stats)

    def step(self) -> StepRecord:
        cand, pairs = self.propose()
        lm_c, lh_c = self._evaluate(cand, pairs)
        self.iter += 1
        lm, lh = self.loss_m, self.loss_hr
        H = self.config.hr_ceiling
        if self.config.ceiling_mode == "running":
            H = max(H, lh)
        elif self.config.ceiling_mode == "initial":
            H = max(H, self.initial_loss[1])
        accepted = False
        if lm_c < lm and lh_c < H:
            branch, accepted = "i", True
            self.gamma += 1
        elif lm_c == lm and lh_c < lh:
            branch, accepted = "ii", True
            self.gamma += 1
        elif lm_c > lm and lh_c <= H:
            branch = "iii"
            accepted = bool(self.rng.random() < self.config.acceptance(lm_c - lm, self.gamma))
        elif lh_c >= H:
            branch = "iv"
        else:
            branch = "none"
        if accepted:
            self.label = cand
            self.stats, self._cand_stats = self._cand_stats, self.stats
            self.loss_m, self.loss_hr = lm_c, lh_c
        return StepRecord(self.iter, lm_c, lh_c, branch, accepted, self.loss_m, self.loss_hr, self.gamma, len(pairs))

    def done(self) -> str | None:
        cfg = self.config
        if self.loss_m == 0.0 and self.loss_hr == 0.0:
            return "exact"
        if cfg.stop_tol_m is not None or cfg.stop_tol_hr is not None:
            ok_m = cfg.stop_tol_m is None or self.loss_m <= cfg.stop_tol_m
            hr_tol = cfg.stop_tol_hr if cfg.stop_tol_hr is not None else cfg.hr_ceiling
            if ok_m and self.loss_hr <= hr_tol:
                return "tolerance"
        if self.iter >= cfg.max_iters:
            return "max_iters"
        return None

    def run(self, trace: list | None = None, max_steps: int | None = None) -> str:
        every = self.config.trace_every
        if trace is not None and not trace:
            trace.append((0, self.loss_m, self.loss_hr, self.gamma, True, "start"))
        reason = self.done()
        steps = 0
        while reason is None and (max_steps is None or steps < max_steps):
            rec = self.step()
            steps += 1
            if trace is not None and (rec.accepted or rec.iter % every == 0):
                trace.append((rec.iter, rec.loss_m, rec.loss_hr, rec.gamma, rec.accepted, rec.branch))
            reason = self.done()
        return reason or "paused"

    def assignment(self) -> np.ndarray:
        return self.problem.to_caller_order(self.label)


@dataclass
class CovGenResult:
    assignment: np.ndarray
    report: LossReport
    trace: list
    iterations: int
    gamma: int
    stop_reason: str
    restarts: int = 0

    @property
    def loss_m(self) -> float:
        return self.report.loss_m

    @property
    def loss_hr(self) -> float:
        return self.report.loss_hr

    def trace_csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for it, lm, lh, g, acc, br in self.trace:
            lines.append(f"{it},{lm!r},{lh!r},{g},{int(acc)},{br}")
        return "\n".join(lines) + "\n"


def _report_from_chain(chain: CovGenChain) -> LossReport:
    p = chain.problem
    med, rates, hr = chain.stats
    target = p.target
    med_c = {c: _rae_triplet(med[c], target.median_array()[c], p.penalty) for c in target.cells()}
    hr_c = {x: _rae_triplet(hr[x], target.hr_array()[x], p.penalty) for x in range(p.k_max + 1)}
    extra = {}
    for t in p.extra_rates:
        pos = int(np.searchsorted(p.rate_times, t))
        tgt = target.rate_array(t)
        comps = {c: _rae_triplet(rates[c][pos], tgt[c], p.penalty) for c in target.cells()}
        worst = max([0.0] + [v for row in comps.values() for v in row if v is not None])
        extra[f"rate:{t:g}"] = {"loss": worst, "components": comps}
    lm_only = max([0.0] + [v for row in med_c.values() for v in row if v is not None])
    lh = max([0.0] + [v for row in hr_c.values() for v in row if v is not None])
    return LossReport(lm_only, lh, med_c, hr_c, extra)


def run_covgen(
    data: IpdDataset,
    target: SubgroupSummaryTable,
    config: AnnealConfig,
    extra_rates=(),
    initial=None,
    rng=None,
) -> CovGenResult:
    """Search for covariate labels matching ``target``.

    Parameters
    ----------
    data : IpdDataset
        Covariate-free records (any covariate present is ignored).
    target : SubgroupSummaryTable
        Published counts, median triples and hazard-ratio triples.
    config : AnnealConfig
        Search hyper-parameters; ``config.seed`` seeds the chain unless
        ``rng`` is given.
    extra_rates : sequence of float
        Survival-rate timepoints from ``target.rates`` whose errors join the
        median objective.
    initial : array_like, optional
        Starting labels in the caller's record order.

    Raises
    ------
    InfeasibleStartError
        Every random start left some hazard ratio not estimable.
    """
    problem = CovGenProblem(data, target, extra_rates, config.ne_penalty)
    chain = CovGenChain(problem, config, rng=rng, initial=initial)
    trace: list = []
    reason = chain.run(trace)
    if trace[-1][0] != chain.iter:
        trace.append((chain.iter, chain.loss_m, chain.loss_hr, chain.gamma, False, "end"))
    log.info("cov-gen stopped (%s) after %d iterations: L_m=%.4g L_HR=%.4g", reason, chain.iter, chain.loss_m, chain.loss_hr)
    return CovGenResult(
        chain.assignment(), _report_from_chain(chain), trace, chain.iter, chain.gamma, reason, chain.restarts
    )


def _rank(result: CovGenResult, ceiling: float):
    return (result.loss_hr > ceiling, result.loss_m, result.loss_hr)


def run_covgen_multistart(
    data: IpdDataset, target: SubgroupSummaryTable, config: AnnealConfig, starts: int, extra_rates=()
) -> CovGenResult:
    """Independent chains from ``SeedSequence(config.seed).spawn(starts)``;
    returns the best run, preferring runs within the hazard-ratio ceiling."""
    best = None
    for child in np.random.SeedSequence(config.seed).spawn(starts):
        res = run_covgen(data, target, config, extra_rates, rng=np.random.default_rng(child))
        if best is None or _rank(res, config.hr_ceiling) < _rank(best, config.hr_ceiling):
            best = res
    return best
