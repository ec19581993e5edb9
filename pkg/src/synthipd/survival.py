"""Kaplan-Meier curves, medians, survival rates and the Cox hazard ratio.

Confidence intervals follow the conventions of the R ``survival`` package:
a log-transformed Greenwood band for the survival curve, median bounds read
off where that band crosses 0.5, Efron handling of tied event times and a
Wald interval for the log hazard ratio.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .data import NE, NOT_ESTIMABLE, IpdDataset, SubgroupSummaryTable, SummaryTriple
from .errors import ConvergenceError, EmptySliceError

Z95 = kern.Z95


class ExtrapolationWarning(UserWarning):
    """A survival rate was requested beyond the last observed time."""


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous survival step function.

    ``times`` are the distinct event times and ``survival`` the value on
    ``[times[i], times[i+1])``. Before ``times[0]`` the curve equals 1.
    ``greenwood`` holds the running Greenwood sum (the variance of
    ``log S``) when the curve came from :func:`km_fit`.
    """

    times: np.ndarray
    survival: np.ndarray
    censor_times: np.ndarray
    end_time: float
    greenwood: np.ndarray | None = None
    n_risk: np.ndarray | None = None
    n_event: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        surv = np.asarray(self.survival, dtype=float)
        if times.shape != surv.shape:
            raise ValueError("times and survival must have equal length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if surv.size and (np.any(np.diff(surv) > 0) or surv[0] > 1 or surv.min() < 0):
            raise ValueError("survival must be non-increasing within [0, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "survival", surv)
        object.__setattr__(self, "censor_times", np.asarray(self.censor_times, dtype=float))

    def __call__(self, t):
        """Evaluate S(t); accepts scalars or arrays."""
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate(([1.0], self.survival))[idx]
        return float(vals) if np.ndim(vals) == 0 else vals

    def left_limit(self, t):
        """Evaluate S(t-)."""
        idx = np.searchsorted(self.times, t, side="left")
        vals = np.concatenate(([1.0], self.survival))[idx]
        return float(vals) if np.ndim(vals) == 0 else vals

    def band(self):
        """Log-transformed pointwise 95% band at each event time."""
        if self.greenwood is None:
            raise ValueError("curve carries no variance")
        lo = np.empty_like(self.survival)
        hi = np.empty_like(self.survival)
        for i, (s, gw) in enumerate(zip(self.survival, self.greenwood)):
            lo[i], hi[i] = kern.log_band(s, gw)
        return lo, hi

    def breakpoints(self) -> np.ndarray:
        return self.times

    def vertices(self) -> list[tuple[float, float]]:
        """Corner points of the drawn step line from t=0 to ``end_time``."""
        pts = [(0.0, 1.0)]
        prev = 1.0
        for t, s in zip(self.times, self.survival):
            pts.append((float(t), prev))
            pts.append((float(t), float(s)))
            prev = float(s)
        last = max(self.end_time, pts[-1][0])
        if last > pts[-1][0]:
            pts.append((float(last), prev))
        return pts


def _arrays(data):
    if isinstance(data, IpdDataset):
        return data.time, data.event
    time, event = data
    return np.asarray(time, dtype=float), np.asarray(event).astype(bool)


def km_fit(data) -> StepCurve:
    """Product-limit estimate with Greenwood variance.

    ``data`` is an :class:`IpdDataset` (any slice of one) or a
    ``(time, event)`` pair.
    """
    time, event = _arrays(data)
    if time.size == 0:
        raise EmptySliceError("Kaplan-Meier curve is undefined for an empty slice")
    uniq, inv = np.unique(time, return_inverse=True)
    d = np.bincount(inv, weights=event.astype(float), minlength=uniq.size)
    total = np.bincount(inv, minlength=uniq.size)
    n_risk = time.size - np.concatenate(([0], np.cumsum(total)[:-1]))
    has_event = d > 0
    t_ev = uniq[has_event]
    d_ev = d[has_event]
    r_ev = n_risk[has_event].astype(float)
    surv = np.cumprod(1.0 - d_ev / r_ev)
    with np.errstate(divide="ignore"):
        terms = np.where(r_ev > d_ev, d_ev / (r_ev * (r_ev - d_ev)), np.inf)
    greenwood = np.cumsum(terms)
    censor_times = np.unique(time[~event])
    return StepCurve(
        t_ev, surv, censor_times, float(time.max()), greenwood, r_ev.astype(int), d_ev.astype(int)
    )


def km_median(curve: StepCurve) -> SummaryTriple:
    """Median survival with the 95% interval from the transformed band.

    The lower bound is the first time the lower band reaches 0.5 and the
    upper bound the first time the upper band does.
    """
    lo, hi = curve.band()

    def first(values):
        hit = np.flatnonzero(values <= kern.HALF)
        return float(curve.times[hit[0]]) if hit.size else NE

    return SummaryTriple(first(curve.survival), first(lo), first(hi))


def survival_rate(curve: StepCurve, t: float) -> SummaryTriple:
    """S(t) with its pointwise 95% interval."""
    if t < 0:
        raise ValueError("timepoint must be non-negative")
    if t > curve.end_time:
        warnings.warn(
            f"survival rate at t={t} lies beyond the last observed time {curve.end_time}",
            ExtrapolationWarning,
            stacklevel=2,
        )
    idx = int(np.searchsorted(curve.times, t, side="right"))
    if idx == 0:
        return SummaryTriple(1.0, 1.0, 1.0)
    s = float(curve.survival[idx - 1])
    lo, hi = kern.log_band(s, float(curve.greenwood[idx - 1]))
    return SummaryTriple(s, lo, hi)


@dataclass(frozen=True)
class CoxFit:
    """Single-term Cox fit of treatment arm, possibly stratified."""

    theta: float
    se: float
    loglik: float
    score: float
    n_iter: int

    @property
    def hazard_ratio(self) -> float:
        return math.exp(self.theta)

    def triple(self) -> SummaryTriple:
        return SummaryTriple(
            math.exp(self.theta),
            math.exp(self.theta - Z95 * self.se),
            math.exp(self.theta + Z95 * self.se),
        )


def _sorted_cox_inputs(data: IpdDataset, strata):
    order = np.argsort(data.time, kind="stable")
    time = data.time[order]
    event = data.event[order]
    z = data.arm[order].astype(float)
    if strata is None:
        groups = [np.ones(time.size, dtype=bool)]
    else:
        strata = np.asarray(strata)[order]
        groups = [strata == s for s in np.unique(strata)]
    return time, event, z, groups


def cox_loglik(data: IpdDataset, theta: float, strata=None) -> tuple[float, float, float]:
    """Efron log partial likelihood, score and Hessian at ``theta``."""
    time, event, z, groups = _sorted_cox_inputs(data, strata)
    ll = g = h = 0.0
    for inc in groups:
        a, b, c = kern.efron_derivs(time, event, z, inc, float(theta))
        ll, g, h = ll + a, g + b, h + c
    return ll, g, h


def cox_fit(data: IpdDataset, strata=None) -> CoxFit:
    """Fit the hazard ratio of arm 1 versus arm 0 by Newton iteration.

    Parameters
    ----------
    data : IpdDataset
        Records to fit; both arms must be present.
    strata : array_like, optional
        Stratum label per record. Risk sets are formed within strata.

    Raises
    ------
    EmptySliceError
        No events, or an arm is missing.
    ConvergenceError
        The likelihood is monotone in the log hazard ratio (the arms are
        separated in event order), or Newton iteration did not converge.
    """
    if len(data) == 0 or not data.event.any():
        raise EmptySliceError("Cox model needs at least one event")
    n0, n1 = data.arm_sizes()
    if n0 == 0 or n1 == 0:
        raise EmptySliceError("Cox model needs records in both arms")
    time, event, z, groups = _sorted_cox_inputs(data, strata)

    inc_all = dec_all = True
    for inc in groups:
        up, down, _ = kern.monotone_flags(time, event, z, inc)
        inc_all &= up
        dec_all &= down
    if inc_all or dec_all:
        raise ConvergenceError(
            f"partial likelihood is monotone; no finite maximiser after {kern.COX_MAX_ITER} iterations"
        )

    def derivs(theta):
        ll = g = h = 0.0
        for inc in groups:
            a, b, c = kern.efron_derivs(time, event, z, inc, theta)
            ll, g, h = ll + a, g + b, h + c
        return ll, g, h

    theta = 0.0
    ll, g, h = derivs(theta)
    it = 0
    while abs(g) >= kern.COX_TOL:
        if it >= kern.COX_MAX_ITER or not h < 0:
            raise ConvergenceError(f"Cox Newton iteration stopped after {it} iterations (score {g:.3g})")
        step = -g / h
        new = theta + step
        ll2, g2, h2 = derivs(new)
        halvings = 0
        while (not math.isfinite(ll2) or ll2 < ll - 1e-12 * abs(ll)) and halvings < kern.COX_MAX_HALVINGS:
            step *= 0.5
            new = theta + step
            ll2, g2, h2 = derivs(new)
            halvings += 1
        theta, ll, g, h = new, ll2, g2, h2
        it += 1
    return CoxFit(theta, 1.0 / math.sqrt(-h), ll, g, it)


def hazard_ratio(data: IpdDataset, strata=None) -> SummaryTriple:
    return cox_fit(data, strata).triple()


def summarize(data: IpdDataset, timepoints=()) -> SubgroupSummaryTable:
    """Subgroup table of counts, medians, hazard ratios and survival rates.

    Cells without records, and subgroups where the Cox model cannot be fit,
    are reported as not estimable.
    """
    if data.covariate is None:
        raise ValueError("summarize needs a covariate for every record")
    counts, medians, hrs = {}, {}, {}
    rates = {float(t): {} for t in timepoints}
    for x in range(data.k_max + 1):
        for a in (0, 1):
            cell = data.slice(x, a)
            counts[(x, a)] = len(cell)
            if len(cell) == 0:
                medians[(x, a)] = NOT_ESTIMABLE
                for t in rates:
                    rates[t][(x, a)] = NOT_ESTIMABLE
                continue
            curve = km_fit(cell)
            medians[(x, a)] = km_median(curve)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ExtrapolationWarning)
                for t in rates:
                    rates[t][(x, a)] = survival_rate(curve, t)
        try:
            hrs[x] = hazard_ratio(data.slice(x))
        except (EmptySliceError, ConvergenceError):
            hrs[x] = NOT_ESTIMABLE
    return SubgroupSummaryTable(data.k_max, counts, medians, hrs, rates)
