"""Rebuild per-patient records from a digitized curve and its at-risk table.

For each at-risk interval ``[t_i, t_{i+1})`` the survival ratio over the
interval gives an event total ``e = N_i (1 - S(t_{i+1}-) / S(t_i-))``. The
average drop per event ``p = (S(t_i-) - S(t_{i+1}-)) / e`` then converts
each drop on the curve into an event count, and whatever remains of the
risk-set decrement ``N_i - N_{i+1}`` is censored, on the censor ticks drawn
in that interval when there are any.

Left limits are used at the grid times because the at-risk count at ``t_i``
still includes anyone who fails exactly at ``t_i``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import SCHEMA_VERSION, IpdDataset
from ..errors import ConfigError, DigitizationError
from .svg import DigitizedCurve


@dataclass
class RiskTable:
    """At-risk counts on a time grid, optionally with reported censorings.

    ``censored[a][i]`` is the number censored in ``[grid[i], grid[i+1])``.
    """

    grid: np.ndarray
    at_risk: dict[int, np.ndarray]
    censored: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 1:
            raise ConfigError("risk table grid must be a non-empty 1-d sequence")
        if np.any(np.diff(self.grid) <= 0) or self.grid[0] < 0:
            raise ConfigError("risk table grid must be non-negative and strictly increasing")
        self.at_risk = {int(a): np.asarray(v, dtype=np.int64) for a, v in self.at_risk.items()}
        self.censored = {int(a): np.asarray(v, dtype=np.int64) for a, v in self.censored.items()}
        if set(self.at_risk) != {0, 1}:
            raise ConfigError("risk table needs at-risk counts for arms 0 and 1")
        for a, n in self.at_risk.items():
            if n.shape != self.grid.shape:
                raise ConfigError(f"arm {a} has {n.size} at-risk counts for {self.grid.size} grid times")
            if np.any(n < 0) or np.any(np.diff(n) > 0):
                raise ConfigError(f"arm {a} at-risk counts must be non-negative and non-increasing")
        for a, c in self.censored.items():
            if a not in (0, 1):
                raise ConfigError(f"reported censorings for unknown arm {a}")
            if c.shape != (self.grid.size - 1,):
                raise ConfigError(f"arm {a} needs {self.grid.size - 1} reported censor counts, got {c.size}")
            if np.any(c < 0):
                raise ConfigError(f"arm {a} reported censor counts must be non-negative")

    @property
    def n_intervals(self) -> int:
        return self.grid.size - 1

    def arm_size(self, arm: int) -> int:
        return int(self.at_risk[arm][0])

    @classmethod
    def from_data(cls, data: IpdDataset, grid) -> "RiskTable":
        """At-risk counts ``#{time >= t}`` of a dataset, as printed under a figure."""
        grid = np.asarray(grid, dtype=float)
        at_risk = {a: np.array([(data.time[data.arm == a] >= t).sum() for t in grid]) for a in (0, 1)}
        return cls(grid, at_risk)

    def to_json(self) -> dict:
        out = {
            "grid": self.grid.tolist(),
            "at_risk": {str(a): v.tolist() for a, v in sorted(self.at_risk.items())},
        }
        if self.censored:
            out["censored"] = {str(a): v.tolist() for a, v in sorted(self.censored.items())}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RiskTable":
        for key in ("grid", "at_risk"):
            if key not in obj:
                raise ConfigError(f"risk table is missing {key!r}")
        return cls(obj["grid"], obj["at_risk"], obj.get("censored", {}))


@dataclass
class IntervalEstimate:
    """Accounting for one arm and interval (or the tail after the last grid time)."""

    arm: int
    index: int
    start: float
    end: float
    n_start: int
    n_end: int
    e_raw: float
    e_formula: int
    events: int
    censored: int
    correction: int
    literal_censored: int
    n_drops: int
    n_ticks: int
    trailing: bool = False

    @property
    def decrement(self) -> int:
        return self.n_start - self.n_end


def _drop_window(curve: DigitizedCurve, start: float, end: float | None):
    hi = curve.times.size if end is None else np.searchsorted(curve.times, end, side="left")
    lo = np.searchsorted(curve.times, start, side="left")
    return lo, hi


def _allocate_per_drop(drops: np.ndarray, e: int, e_raw: float) -> np.ndarray:
    """Events per drop, ``round(drop / p)`` but at least one, and the unrounded shares."""
    scale = e if e > 0 else max(e_raw, 1.0)
    share = drops / drops.sum() * scale
    return np.maximum(1, np.floor(share + 0.5)).astype(np.int64), share


def _sequential_shares(curve, lo, hi, t0, t1, n0, c_est, ticks):
    """Events per drop from the risk set just before each drop.

    The risk set starts at ``n0`` and loses the events already assigned and
    the censorings estimated before the drop: one per tick strictly earlier,
    or, without ticks, ``c_est`` spread evenly over the interval.
    """
    levels = np.concatenate(([curve.start], curve.survival))
    shares = np.empty(hi - lo)
    counts = np.empty(hi - lo, dtype=np.int64)
    assigned = 0
    for k, j in enumerate(range(lo, hi)):
        t = curve.times[j]
        if ticks.size:
            cens = np.searchsorted(ticks, t, side="left")
        else:
            cens = c_est * (t - t0) / (t1 - t0) if t1 > t0 else 0.0
        at_risk = max(n0 - assigned - cens, 1.0)
        before = levels[j]
        shares[k] = at_risk * (1.0 - levels[j + 1] / before) if before > 0 else 0.0
        counts[k] = max(1, int(math.floor(shares[k] + 0.5)))
        assigned += counts[k]
    return counts, shares


def _largest_remainder(share: np.ndarray, total: int, minimum: int) -> np.ndarray:
    """Integers summing to ``total`` close to ``share``; earlier index wins ties."""
    n = share.size
    base = np.full(n, minimum, dtype=np.int64)
    left = total - base.sum()
    if left < 0:
        raise ValueError("total below the per-item minimum")
    extra = np.maximum(share - minimum, 0.0)
    if extra.sum() > 0:
        extra = extra / extra.sum() * left
    else:
        extra = np.full(n, left / n)
    floor = np.floor(extra).astype(np.int64)
    rem = left - floor.sum()
    order = np.lexsort((np.arange(n), -(extra - floor)))
    floor[order[:rem]] += 1
    return base + floor


def _fit_events(counts: np.ndarray, share: np.ndarray, limit: int) -> np.ndarray:
    """Trim the most over-rounded drops until the total fits ``limit``."""
    counts = counts.copy()
    while counts.sum() > limit:
        over = np.where(counts > 1, counts - share, -np.inf)
        k = int(np.argmax(over))
        if not np.isfinite(over[k]):
            break
        counts[k] -= 1
    return counts


def estimate_interval_events(
    curve: DigitizedCurve, risk: RiskTable, arm: int, i: int, method: str = "sequential"
) -> IntervalEstimate:
    """Event and censoring totals for interval ``[grid[i], grid[i+1])``.

    The formula estimate ``e_formula`` is reported as is; ``events`` is the
    total actually emitted after per-drop rounding (or ``decrement - c``
    when censorings are reported), and ``censored`` the rest of the
    decrement.

    ``method="average"`` gives every drop ``round(drop / p)`` events with
    ``p`` the interval's average drop per event. ``"sequential"`` instead
    inverts each drop against the risk set just before it, which stays exact
    when censorings inside the interval shrink the risk set.
    """
    if not 0 <= i < risk.n_intervals:
        raise IndexError(f"interval {i} outside 0..{risk.n_intervals - 1}")
    t0, t1 = float(risk.grid[i]), float(risk.grid[i + 1])
    n0, n1 = int(risk.at_risk[arm][i]), int(risk.at_risk[arm][i + 1])
    return _interval(curve, arm, i, t0, t1, n0, n1, risk.censored.get(arm), False, method)[0]


METHODS = ("sequential", "average")


def _interval(curve, arm, i, t0, t1, n0, n1, reported, trailing, method="sequential"):
    if method not in METHODS:
        raise ConfigError(f"unknown reconstruction method {method!r}; expected one of {METHODS}")
    s0 = curve.left_limit(t0)
    s1 = curve(curve.end_time) if trailing else curve.left_limit(t1)
    dec = n0 - n1
    where = f"arm {arm}, interval {i} [{t0:g}, {t1:g})"
    if n0 > 0 and s0 <= 0:
        raise DigitizationError(f"{where}: survival is 0 with {n0} patients still at risk")
    e_raw = n0 * (1.0 - s1 / s0) if n0 > 0 else 0.0
    e_formula = max(0, int(math.floor(e_raw + 0.5)))
    lo, hi = _drop_window(curve, t0, None if trailing else t1)
    drops = curve.drops()[lo:hi]
    ticks = curve.censor_ticks
    tick_mask = (ticks >= t0) & ((ticks <= t1) if trailing else (ticks < t1))
    n_ticks = int(tick_mask.sum())

    if drops.size == 0:
        per_drop = np.zeros(0, dtype=np.int64)
    elif reported is not None and not trailing:
        c_rep = int(reported[i])
        target = dec - c_rep
        if target < drops.size:
            raise DigitizationError(
                f"{where}: {drops.size} drops on the curve but only {target} events fit the reported censorings"
            )
        if method == "sequential":
            share = _sequential_shares(curve, lo, hi, t0, t1, n0, c_rep, ticks[tick_mask])[1]
        else:
            share = drops / drops.sum() * max(target, 1)
        per_drop = _largest_remainder(share, target, 1)
    elif method == "sequential":
        c_est = max(dec - e_formula, 0)
        per_drop, share = _sequential_shares(curve, lo, hi, t0, t1, n0, c_est, ticks[tick_mask])
        per_drop = _fit_events(per_drop, share, dec)
    else:
        per_drop, share = _allocate_per_drop(drops, e_formula, e_raw)
        per_drop = _fit_events(per_drop, share, dec)
    events = int(per_drop.sum())
    if reported is not None and not trailing and drops.size == 0 and dec - int(reported[i]) > 0:
        raise DigitizationError(f"{where}: reported censorings leave {dec - int(reported[i])} events but the curve is flat")
    if events > dec:
        raise DigitizationError(f"{where}: {drops.size} drops need at least {events} events but only {dec} patients leave")
    est = IntervalEstimate(
        arm=arm, index=i, start=t0, end=t1, n_start=n0, n_end=n1,
        e_raw=float(e_raw), e_formula=e_formula, events=events, censored=dec - events,
        correction=events - e_formula, literal_censored=n0 - e_formula,
        n_drops=int(drops.size), n_ticks=n_ticks, trailing=trailing,
    )
    return est, per_drop, curve.times[lo:hi], ticks[tick_mask]


def _censor_times(count: int, ticks: np.ndarray, t0: float, t1: float, rng, at_end: float | None):
    if count == 0:
        return np.empty(0)
    if ticks.size:
        k = ticks.size
        reps = np.full(k, count // k, dtype=np.int64)
        rem = count % k
        if rem:
            reps[np.sort(rng.choice(k, rem, replace=False))] += 1
        return np.repeat(ticks, reps)
    if at_end is not None:
        return np.full(count, at_end)
    return t0 + (np.arange(count) + 0.5) / count * (t1 - t0)


@dataclass
class ArmReconstruction:
    time: np.ndarray
    event: np.ndarray
    intervals: list[IntervalEstimate]


def distribute_events(
    curve: DigitizedCurve, risk: RiskTable, arm: int, seed=None, method: str = "sequential"
) -> ArmReconstruction:
    """Per-patient times and event flags for one arm.

    Patients still at risk at the last grid time form a final interval up to
    the end of the drawn curve: drops there become events, the rest are
    censored on the ticks in that stretch or, without ticks, at the end.
    """
    rng = np.random.default_rng(seed)
    times, flags, report = [], [], []
    reported = risk.censored.get(arm)
    for i in range(risk.n_intervals):
        t0, t1 = float(risk.grid[i]), float(risk.grid[i + 1])
        n0, n1 = int(risk.at_risk[arm][i]), int(risk.at_risk[arm][i + 1])
        est, per_drop, drop_t, ticks = _interval(curve, arm, i, t0, t1, n0, n1, reported, False, method)
        times += [np.repeat(drop_t, per_drop), _censor_times(est.censored, ticks, t0, t1, rng, None)]
        flags += [np.ones(est.events, bool), np.zeros(est.censored, bool)]
        report.append(est)
    t_last = float(risk.grid[-1])
    n_last = int(risk.at_risk[arm][-1])
    if n_last > 0:
        end = max(t_last, curve.end_time)
        est, per_drop, drop_t, ticks = _interval(curve, arm, risk.n_intervals, t_last, end, n_last, 0, None, True, method)
        times += [np.repeat(drop_t, per_drop), _censor_times(est.censored, ticks, t_last, end, rng, end)]
        flags += [np.ones(est.events, bool), np.zeros(est.censored, bool)]
        report.append(est)
    time = np.concatenate(times) if times else np.empty(0)
    event = np.concatenate(flags) if flags else np.empty(0, bool)
    order = np.lexsort((~event, time))
    return ArmReconstruction(time[order], event[order], report)


@dataclass
class DigitizationReport:
    intervals: list[IntervalEstimate]
    seed: int | None = None
    method: str = "sequential"

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "seed": self.seed,
            "method": self.method,
            "intervals": [asdict(iv) for iv in self.intervals],
        }

    def totals(self, arm: int) -> tuple[int, int]:
        ivs = [iv for iv in self.intervals if iv.arm == arm]
        return sum(iv.events for iv in ivs), sum(iv.censored for iv in ivs)


def digitize(
    curves: dict[int, DigitizedCurve], risk: RiskTable, seed=None, method: str = "sequential"
) -> tuple[IpdDataset, DigitizationReport]:
    """Covariate-free records for both arms.

    Both arms draw censor placements from a fresh generator seeded with
    ``seed``, so identical inputs give identical records.
    """
    missing = {0, 1} - {int(a) for a in curves}
    if missing:
        raise ConfigError(f"no curve for arm(s) {sorted(missing)}")
    parts, report = [], []
    for arm in (0, 1):
        rec = distribute_events(curves[arm], risk, arm, seed, method)
        if rec.time.size != risk.arm_size(arm):
            raise DigitizationError(
                f"arm {arm}: reconstructed {rec.time.size} records, at-risk table starts at {risk.arm_size(arm)}"
            )
        parts.append((rec.time, rec.event, np.full(rec.time.size, arm)))
        report += rec.intervals
    time, event, arm = (np.concatenate(col) for col in zip(*parts))
    return IpdDataset(time, event, arm), DigitizationReport(report, seed, method)
