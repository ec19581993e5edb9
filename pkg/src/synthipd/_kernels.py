"""Compiled inner loops.

Every routine here works on arrays sorted by ascending time and selects the
records of interest through a boolean mask, so a subgroup never has to be
copied out of the full dataset. Missing statistics are returned as NaN; the
public API converts them to the ``NE`` sentinel.
"""

import math

import numpy as np
from numba import njit

Z95 = 1.959963984540054
# slack for products that should equal 0.5 exactly but round just above it
HALF = 0.5 + 1e-12

COX_MAX_ITER = 50
COX_TOL = 1e-9
COX_MAX_HALVINGS = 30


@njit(cache=True)
def log_band(s, gw):
    """Log-transformed pointwise 95% band around a survival value."""
    if s <= 0.0:
        return 0.0, 0.0
    se = math.sqrt(gw)
    lo = s * math.exp(-Z95 * se)
    hi = s * math.exp(Z95 * se)
    if hi > 1.0:
        hi = 1.0
    return lo, hi


@njit(cache=True)
def cell_stats(time, event, sel, rate_times, out_med, out_rates):
    """Median triple and survival-rate triples of the records under ``sel``.

    ``rate_times`` must be ascending. Returns the number of selected records;
    with zero records everything stays NaN.
    """
    nt = time.shape[0]
    out_med[:] = np.nan
    out_rates[:, :] = np.nan
    n = 0
    for i in range(nt):
        if sel[i]:
            n += 1
    if n == 0:
        return 0
    s = 1.0
    gw = 0.0
    lo = 1.0
    hi = 1.0
    at_risk = n
    found_est = False
    found_lo = False
    found_hi = False
    nr = rate_times.shape[0]
    k = 0
    i = 0
    while i < nt:
        if not sel[i]:
            i += 1
            continue
        t = time[i]
        d = 0
        c = 0
        j = i
        while j < nt and time[j] == t:
            if sel[j]:
                if event[j]:
                    d += 1
                else:
                    c += 1
            j += 1
        while k < nr and rate_times[k] < t:
            out_rates[k, 0] = s
            out_rates[k, 1] = lo
            out_rates[k, 2] = hi
            k += 1
        if d > 0:
            s *= 1.0 - d / at_risk
            if d == at_risk:
                gw = np.inf
            else:
                gw += d / (at_risk * (at_risk - d))
            lo, hi = log_band(s, gw)
            if not found_est and s <= HALF:
                out_med[0] = t
                found_est = True
            if not found_lo and lo <= HALF:
                out_med[1] = t
                found_lo = True
            if not found_hi and hi <= HALF:
                out_med[2] = t
                found_hi = True
        at_risk -= d + c
        i = j
    while k < nr:
        out_rates[k, 0] = s
        out_rates[k, 1] = lo
        out_rates[k, 2] = hi
        k += 1
    return n


@njit(cache=True)
def efron_derivs(time, event, z, include, theta):
    """Log partial likelihood, score and Hessian with Efron tie handling."""
    nt = time.shape[0]
    ll = 0.0
    g = 0.0
    h = 0.0
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    i = nt - 1
    while i >= 0:
        if not include[i]:
            i -= 1
            continue
        t = time[i]
        d = 0
        d0 = 0.0
        d1 = 0.0
        d2 = 0.0
        zsum = 0.0
        j = i
        while j >= 0 and time[j] == t:
            if include[j]:
                zj = z[j]
                w = math.exp(theta * zj)
                s0 += w
                s1 += w * zj
                s2 += w * zj * zj
                if event[j]:
                    d += 1
                    d0 += w
                    d1 += w * zj
                    d2 += w * zj * zj
                    zsum += zj
            j -= 1
        if d > 0:
            ll += theta * zsum
            g += zsum
            for m in range(d):
                f = m / d
                a0 = s0 - f * d0
                a1 = s1 - f * d1
                a2 = s2 - f * d2
                mean = a1 / a0
                ll -= math.log(a0)
                g -= mean
                h -= a2 / a0 - mean * mean
        i = j
    return ll, g, h


@njit(cache=True)
def monotone_flags(time, event, z, include):
    """Detect a partial likelihood with no finite maximiser for binary ``z``.

    Returns ``(increasing, decreasing, n_events)``: ``increasing`` holds when
    at every event time the failing records carry the largest ``z`` in the
    risk set, ``decreasing`` when they carry the smallest.
    """
    nt = time.shape[0]
    r0 = 0
    r1 = 0
    inc = True
    dec = True
    n_events = 0
    i = nt - 1
    while i >= 0:
        if not include[i]:
            i -= 1
            continue
        t = time[i]
        e0 = 0
        e1 = 0
        j = i
        while j >= 0 and time[j] == t:
            if include[j]:
                if z[j] > 0.5:
                    r1 += 1
                    if event[j]:
                        e1 += 1
                else:
                    r0 += 1
                    if event[j]:
                        e0 += 1
            j -= 1
        if e0 + e1 > 0:
            n_events += e0 + e1
            if not (e0 == 0 or r1 == 0):
                inc = False
            if not (e1 == 0 or r0 == 0):
                dec = False
        i = j
    return inc, dec, n_events


@njit(cache=True)
def cox_newton(time, event, z, include):
    """Newton-Raphson from zero with step halving.

    Returns ``(theta, loglik, score, hessian, iterations, converged)``.
    """
    theta = 0.0
    ll, g, h = efron_derivs(time, event, z, include, theta)
    it = 0
    converged = False
    while True:
        if abs(g) < COX_TOL:
            converged = True
            break
        if it >= COX_MAX_ITER or not h < 0.0:
            break
        step = -g / h
        new = theta + step
        ll2, g2, h2 = efron_derivs(time, event, z, include, new)
        halvings = 0
        while (not math.isfinite(ll2) or ll2 < ll - 1e-12 * abs(ll)) and halvings < COX_MAX_HALVINGS:
            step *= 0.5
            new = theta + step
            ll2, g2, h2 = efron_derivs(time, event, z, include, new)
            halvings += 1
        theta, ll, g, h = new, ll2, g2, h2
        it += 1
    return theta, ll, g, h, it, converged


@njit(cache=True)
def subgroup_hr(time, event, arm_f, include, out):
    """Hazard-ratio triple (arm 1 vs arm 0) for the records under ``include``."""
    out[:] = np.nan
    has0 = False
    has1 = False
    for i in range(time.shape[0]):
        if include[i]:
            if arm_f[i] > 0.5:
                has1 = True
            else:
                has0 = True
    if not (has0 and has1):
        return False
    inc, dec, n_events = monotone_flags(time, event, arm_f, include)
    if n_events == 0 or inc or dec:
        return False
    theta, ll, g, h, it, converged = cox_newton(time, event, arm_f, include)
    if not converged or not h < 0.0:
        return False
    se = 1.0 / math.sqrt(-h)
    out[0] = math.exp(theta)
    out[1] = math.exp(theta - Z95 * se)
    out[2] = math.exp(theta + Z95 * se)
    return True


@njit(cache=True)
def evaluate_cells(time, event, arm, arm_f, label, rate_times, touched_cell, touched_group, med, rates, hr):
    """Recompute the statistics of touched cells and subgroups in place.

    ``med`` has shape (K+1, 2, 3), ``rates`` (K+1, 2, R, 3), ``hr`` (K+1, 3).
    """
    n = time.shape[0]
    n_groups = med.shape[0]
    sel = np.empty(n, dtype=np.bool_)
    for x in range(n_groups):
        for a in range(2):
            if touched_cell[x, a]:
                for i in range(n):
                    sel[i] = label[i] == x and arm[i] == a
                cell_stats(time, event, sel, rate_times, med[x, a], rates[x, a])
        if touched_group[x]:
            for i in range(n):
                sel[i] = label[i] == x
            subgroup_hr(time, event, arm_f, sel, hr[x])


@njit(cache=True)
def propose_swaps(label, arm, perm, n_pairs, out_label, pairs):
    """Swap labels of up to ``n_pairs`` disjoint same-arm, different-label pairs.

    Records are visited in ``perm`` order. Each arm keeps a stack of unmatched
    records; the stack only ever holds one label, so a visited record either
    pairs with the top of its arm's stack or is pushed onto it.
    Returns the number of pairs swapped.
    """
    n = label.shape[0]
    out_label[:] = label
    stack = np.empty((2, n), dtype=np.int64)
    size = np.zeros(2, dtype=np.int64)
    count = 0
    if n_pairs <= 0:
        return 0
    for p in range(n):
        idx = perm[p]
        a = arm[idx]
        top = size[a]
        if top > 0 and label[stack[a, top - 1]] != label[idx]:
            j = stack[a, top - 1]
            size[a] = top - 1
            out_label[idx] = label[j]
            out_label[j] = label[idx]
            pairs[count, 0] = idx
            pairs[count, 1] = j
            count += 1
            if count == n_pairs:
                break
        else:
            stack[a, top] = idx
            size[a] = top + 1
    return count


@njit(cache=True)
def max_rae(cand, target, valid, penalty):
    """Largest relative absolute error over flattened statistic arrays.

    NaN marks a not-estimable value: NaN against NaN costs nothing, NaN
    against a number costs ``penalty``.
    """
    worst = 0.0
    for k in range(target.shape[0]):
        if not valid[k]:
            continue
        t = target[k]
        c = cand[k]
        if math.isnan(t):
            e = 0.0 if math.isnan(c) else penalty
        elif math.isnan(c):
            e = penalty
        else:
            e = abs(t - c) / abs(t)
        if e > worst:
            worst = e
    return worst
