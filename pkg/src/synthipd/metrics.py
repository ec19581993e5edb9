"""Distances between a true and a synthetic dataset, subgroup by subgroup.

NAUC is the normalized area between two Kaplan-Meier curves on ``[0, tau]``
and KS the largest vertical gap. Both are computed exactly on the merged
breakpoints of the two step functions; ``paper_literal=True`` switches to
the discrete estimator that samples both curves at the true slice's event
times only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import SCHEMA_VERSION, IpdDataset
from .survival import StepCurve, km_fit


def _curve(obj) -> StepCurve:
    return obj if isinstance(obj, StepCurve) else km_fit(obj)


def default_tau(true_curve: StepCurve, synth_curve: StepCurve) -> float:
    """Largest observed time across both slices."""
    return max(true_curve.end_time, synth_curve.end_time)


def _resolve(true_slice, synth_slice, tau):
    f, g = _curve(true_slice), _curve(synth_slice)
    tau = default_tau(f, g) if tau is None else float(tau)
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return f, g, tau


def _merged_grid(f: StepCurve, g: StepCurve, tau: float) -> np.ndarray:
    pts = np.union1d(f.times, g.times)
    pts = pts[(pts > 0) & (pts < tau)]
    return np.concatenate(([0.0], pts, [tau]))


def _literal_grid(f: StepCurve, tau: float) -> np.ndarray:
    pts = f.times[(f.times > 0) & (f.times <= tau)]
    return np.concatenate(([0.0], pts))


def nauc(true_slice, synth_slice, tau=None, paper_literal=False) -> float:
    """Normalized area between the two survival curves on ``[0, tau]``.

    Slices may be :class:`IpdDataset` objects or ready-made step curves.
    """
    f, g, tau = _resolve(true_slice, synth_slice, tau)
    if paper_literal:
        grid = _literal_grid(f, tau)
        gaps = np.abs(f(grid[1:]) - g(grid[1:]))
        return float(np.sum(np.diff(grid) * gaps) / tau)
    grid = _merged_grid(f, g, tau)
    gaps = np.abs(f(grid[:-1]) - g(grid[:-1]))
    return float(np.sum(np.diff(grid) * gaps) / tau)


def ks(true_slice, synth_slice, tau=None, paper_literal=False) -> float:
    """Largest absolute gap between the two survival curves on ``[0, tau]``."""
    f, g, tau = _resolve(true_slice, synth_slice, tau)
    if paper_literal:
        grid = _literal_grid(f, tau)[1:]
        if grid.size == 0:
            return 0.0
    else:
        grid = _merged_grid(f, g, tau)
    return float(np.max(np.abs(f(grid) - g(grid))))


@dataclass
class MetricReport:
    """Per-cell NAUC/KS and their aggregates.

    ``cells`` maps ``(x, a)`` to a dict with ``nauc``, ``ks``, ``n`` and
    ``tau``; a cell that is empty in either dataset maps to ``None``.
    """

    cells: dict[tuple[int, int], dict | None]
    weighted_nauc: float
    averaged_ks: float
    tau: float | None = None
    paper_literal: bool = False
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        cells = []
        for (x, a), entry in sorted(self.cells.items()):
            cells.append({"x": x, "a": a, **(entry or {"empty": True})})
        return {
            "schema": SCHEMA_VERSION,
            "tau": self.tau,
            "paper_literal": self.paper_literal,
            "cells": cells,
            "weighted_nauc": self.weighted_nauc,
            "averaged_ks": self.averaged_ks,
            "flags": list(self.flags),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def aggregate(per_cell: dict, counts: dict, k_max: int | None = None, paper_literal=False) -> MetricReport:
    """Size-weighted NAUC and cell-averaged KS.

    ``per_cell`` maps ``(x, a)`` to ``(nauc, ks)`` or ``None`` for an empty
    cell; ``counts`` gives ``n_{x,a}``. Empty cells are dropped and the NAUC
    weights renormalized over the remaining cells. The KS mean divides by the
    number of non-empty cells; in paper-literal mode it divides by ``2K``
    instead, which double counts when labels run over ``0..K``.
    """
    flags = []
    live = {c: v for c, v in per_cell.items() if v is not None}
    if len(live) < len(per_cell):
        flags.append("empty cells excluded: " + ", ".join(str(c) for c in sorted(set(per_cell) - set(live))))
    if not live:
        return MetricReport(dict.fromkeys(per_cell), math.nan, math.nan, flags=flags + ["no cells"])
    total = sum(counts[c] for c in live)
    w_nauc = sum(counts[c] / total * live[c][0] for c in live)
    ks_sum = sum(v[1] for v in live.values())
    if paper_literal and k_max:
        avg_ks = ks_sum / (2 * k_max)
        flags.append(f"KS averaged with literal weight 1/(2K), K={k_max}, over {len(live)} cells")
    else:
        avg_ks = ks_sum / len(live)
    cells = {
        c: (None if v is None else {"nauc": v[0], "ks": v[1], "n": counts[c]}) for c, v in per_cell.items()
    }
    return MetricReport(cells, float(w_nauc), float(avg_ks), paper_literal=paper_literal, flags=flags)


def evaluate(true_data: IpdDataset, synth_data: IpdDataset, tau=None, paper_literal=False) -> MetricReport:
    """Compare every ``(x, a)`` cell of two covariate-labelled datasets."""
    if true_data.covariate is None or synth_data.covariate is None:
        raise ValueError("both datasets need covariates")
    k_max = max(true_data.k_max, synth_data.k_max)
    per_cell, counts, taus = {}, {}, {}
    for x in range(k_max + 1):
        for a in (0, 1):
            t_slice, s_slice = true_data.slice(x, a), synth_data.slice(x, a)
            counts[(x, a)] = len(t_slice)
            if len(t_slice) == 0 or len(s_slice) == 0:
                per_cell[(x, a)] = None
                continue
            f, g = km_fit(t_slice), km_fit(s_slice)
            cell_tau = default_tau(f, g) if tau is None else float(tau)
            taus[(x, a)] = cell_tau
            per_cell[(x, a)] = (
                nauc(f, g, cell_tau, paper_literal),
                ks(f, g, cell_tau, paper_literal),
            )
    report = aggregate(per_cell, counts, k_max, paper_literal)
    for c, t in taus.items():
        report.cells[c]["tau"] = t
    report.tau = None if tau is None else float(tau)
    return report
