"""Exhaustive enumeration of count-feasible label vectors for tiny instances."""

import itertools
import warnings

import numpy as np

from synthipd import IpdDataset, summarize
from synthipd.covgen import loss_hr, loss_m


def small_instance(rng, n_per_arm=6, per_label=3):
    n = 2 * n_per_arm
    time = np.round(rng.exponential(10.0, n), 4) + 0.01
    event = rng.random(n) > 0.2
    arm = np.repeat([0, 1], n_per_arm)
    cov = np.concatenate([rng.permutation(np.repeat([0, 1], [per_label, n_per_arm - per_label])) for _ in (0, 1)])
    data = IpdDataset(time, event, arm, cov, k_max=1)
    return data, summarize(data)


def brute_force_min(data, target, ceiling, penalty=1.0):
    """Smallest L_m over all label vectors with the target counts and L_HR <= ceiling."""
    idx = [np.flatnonzero(data.arm == a) for a in (0, 1)]
    ones = [target.counts[(1, a)] for a in (0, 1)]
    best = np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for c0 in itertools.combinations(idx[0], ones[0]):
            for c1 in itertools.combinations(idx[1], ones[1]):
                lab = np.zeros(len(data), dtype=int)
                lab[list(c0) + list(c1)] = 1
                cand = data.with_covariate(lab, 1)
                table = summarize(cand)
                if loss_hr(table, target, penalty).value <= ceiling:
                    best = min(best, loss_m(table, target, penalty).value)
    return best
