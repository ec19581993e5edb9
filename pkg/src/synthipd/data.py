"""Core containers: patient records, datasets, summary triples and tables.

Datasets are stored column-wise as numpy arrays. A dataset either carries a
covariate for every record or for none of them (the digitized, covariate-free
form).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1


class NotEstimable:
    """Sentinel for a statistic that cannot be estimated from the data."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NE"

    def __reduce__(self):
        return (NotEstimable, ())


NE = NotEstimable()


def is_ne(value) -> bool:
    return value is NE


def to_float(value) -> float:
    """Map a triple component to a float, ``NE`` becoming NaN."""
    return math.nan if value is NE else float(value)


def from_float(value: float):
    """Inverse of :func:`to_float`."""
    return NE if not math.isfinite(value) else float(value)


def _json_value(value):
    return "NE" if value is NE else value


def _parse_value(value):
    if value is None or value == "NE":
        return NE
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse summary value {value!r}") from exc
    return from_float(float(value))


@dataclass(frozen=True)
class SummaryTriple:
    """A point estimate with the bounds of its 95% confidence interval."""

    estimate: float | NotEstimable
    lo95: float | NotEstimable = NE
    hi95: float | NotEstimable = NE

    def __post_init__(self):
        vals = (self.estimate, self.lo95, self.hi95)
        if all(v is not NE for v in vals):
            lo, est, hi = self.lo95, self.estimate, self.hi95
            if not (lo <= est + 1e-12 and est <= hi + 1e-12):
                raise ValueError(f"CI does not bracket the estimate: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([to_float(self.estimate), to_float(self.lo95), to_float(self.hi95)])

    @classmethod
    def from_array(cls, values) -> "SummaryTriple":
        est, lo, hi = (from_float(float(v)) for v in values)
        return cls(est, lo, hi)

    def to_json(self) -> list:
        return [_json_value(self.estimate), _json_value(self.lo95), _json_value(self.hi95)]

    @classmethod
    def from_json(cls, values) -> "SummaryTriple":
        if isinstance(values, dict):
            values = [values.get("estimate"), values.get("lo95"), values.get("hi95")]
        if len(values) != 3:
            raise ConfigError(f"summary triple needs 3 entries, got {values!r}")
        return cls(*(_parse_value(v) for v in values))

    def __str__(self):
        def fmt(v):
            return "NE" if v is NE else f"{v:.2f}"

        return f"{fmt(self.estimate)} ({fmt(self.lo95)}-{fmt(self.hi95)})"


NOT_ESTIMABLE = SummaryTriple(NE, NE, NE)


@dataclass(frozen=True)
class IpdRecord:
    time: float
    event: bool
    arm: int
    covariate: int | None = None

    def __post_init__(self):
        if not self.time >= 0:
            raise ValueError(f"time must be non-negative, got {self.time}")
        if self.arm not in (0, 1):
            raise ValueError(f"arm must be 0 or 1, got {self.arm}")
        if self.covariate is not None and self.covariate < 0:
            raise ValueError(f"covariate must be non-negative, got {self.covariate}")


class IpdDataset:
    """Column-oriented collection of individual patient records.

    Parameters
    ----------
    time, event, arm : array_like
        Observed times, event indicators (1 = event) and treatment arms.
    covariate : array_like, optional
        Categorical labels in ``{0, ..., k_max}``; ``None`` for a
        covariate-free dataset.
    k_max : int, optional
        Largest admissible label. Defaults to the largest label present.
    """

    def __init__(self, time, event, arm, covariate=None, k_max=None):
        self.time = np.array(time, dtype=float).reshape(-1)
        self.event = np.asarray(event).astype(bool).reshape(-1)
        self.arm = np.asarray(arm).astype(np.int64).reshape(-1)
        n = self.time.size
        if self.event.size != n or self.arm.size != n:
            raise ValueError("time, event and arm must have the same length")
        if n and (not np.all(np.isfinite(self.time)) or self.time.min() < 0):
            raise ValueError("times must be finite and non-negative")
        if n and not np.isin(self.arm, (0, 1)).all():
            raise ValueError("arm values must be 0 or 1")
        if covariate is None:
            self.covariate = None
            self.k_max = int(k_max) if k_max is not None else 0
        else:
            self.covariate = np.asarray(covariate).astype(np.int64).reshape(-1)
            if self.covariate.size != n:
                raise ValueError("covariate must have the same length as time")
            top = int(self.covariate.max()) if n else 0
            self.k_max = int(k_max) if k_max is not None else top
            if n and (self.covariate.min() < 0 or top > self.k_max):
                raise ValueError(f"covariate labels must lie in 0..{self.k_max}")
        for arr in (self.time, self.event, self.arm):
            arr.setflags(write=False)
        if self.covariate is not None:
            self.covariate.setflags(write=False)

    @classmethod
    def from_records(cls, records: Iterable[IpdRecord], k_max=None) -> "IpdDataset":
        records = list(records)
        covs = [r.covariate for r in records]
        has = [c is not None for c in covs]
        if any(has) and not all(has):
            raise ValueError("either every record or no record may carry a covariate")
        return cls(
            [r.time for r in records],
            [r.event for r in records],
            [r.arm for r in records],
            covs if records and all(has) else None,
            k_max=k_max,
        )

    def __len__(self):
        return self.time.size

    def __iter__(self) -> Iterator[IpdRecord]:
        for i in range(len(self)):
            cov = None if self.covariate is None else int(self.covariate[i])
            yield IpdRecord(float(self.time[i]), bool(self.event[i]), int(self.arm[i]), cov)

    @property
    def records(self) -> list[IpdRecord]:
        return list(self)

    @property
    def has_covariate(self) -> bool:
        return self.covariate is not None

    def subset(self, mask) -> "IpdDataset":
        mask = np.asarray(mask)
        cov = None if self.covariate is None else self.covariate[mask]
        return IpdDataset(self.time[mask], self.event[mask], self.arm[mask], cov, self.k_max)

    def slice(self, x: int | None = None, a: int | None = None) -> "IpdDataset":
        """Records of subgroup ``x`` and/or arm ``a`` (``None`` means all)."""
        mask = np.ones(len(self), dtype=bool)
        if a is not None:
            mask &= self.arm == a
        if x is not None:
            if self.covariate is None:
                raise ValueError("dataset has no covariate")
            mask &= self.covariate == x
        return self.subset(mask)

    def with_covariate(self, covariate, k_max=None) -> "IpdDataset":
        return IpdDataset(self.time, self.event, self.arm, covariate, k_max)

    def without_covariate(self) -> "IpdDataset":
        return IpdDataset(self.time, self.event, self.arm, None)

    def counts(self) -> dict[tuple[int, int], int]:
        """Subgroup sizes ``n_{x,a}`` for every label up to ``k_max``."""
        if self.covariate is None:
            raise ValueError("dataset has no covariate")
        return {
            (x, a): int(np.sum((self.covariate == x) & (self.arm == a)))
            for x in range(self.k_max + 1)
            for a in (0, 1)
        }

    def arm_sizes(self) -> tuple[int, int]:
        return int(np.sum(self.arm == 0)), int(np.sum(self.arm == 1))

    def __eq__(self, other):
        if not isinstance(other, IpdDataset):
            return NotImplemented
        same_cov = (self.covariate is None and other.covariate is None) or (
            self.covariate is not None
            and other.covariate is not None
            and np.array_equal(self.covariate, other.covariate)
        )
        return (
            np.array_equal(self.time, other.time)
            and np.array_equal(self.event, other.event)
            and np.array_equal(self.arm, other.arm)
            and same_cov
        )

    def __repr__(self):
        n0, n1 = self.arm_sizes()
        return f"IpdDataset(n={len(self)}, arms=({n0}, {n1}), k_max={self.k_max}, covariate={self.has_covariate})"


# --------------------------------------------------------------------------
# CSV interchange

CSV_HEADER = ("time", "event", "arm", "covariate")


def dataset_to_csv(data: IpdDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i in range(len(data)):
        cov = "" if data.covariate is None else int(data.covariate[i])
        writer.writerow([repr(float(data.time[i])), int(data.event[i]), int(data.arm[i]), cov])
    return buf.getvalue()


def dataset_from_csv(text: str, k_max=None) -> IpdDataset:
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in CSV_HEADER[:3] if c not in (reader.fieldnames or [])]
    if missing:
        raise ConfigError(f"IPD CSV is missing column(s): {', '.join(missing)}")
    times, events, arms, covs = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            times.append(float(row["time"]))
            ev = int(row["event"])
            arm = int(row["arm"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad IPD CSV row at line {lineno}: {row}") from exc
        if ev not in (0, 1) or arm not in (0, 1):
            raise ConfigError(f"event and arm must be 0/1 at line {lineno}")
        events.append(ev)
        arms.append(arm)
        covs.append((row.get("covariate") or "").strip())
    filled = [c != "" for c in covs]
    if any(filled) and not all(filled):
        raise ConfigError("covariate column must be either fully filled or blank")
    cov = [int(c) for c in covs] if covs and all(filled) else None
    return IpdDataset(times, events, arms, cov, k_max=k_max)


def write_csv(data: IpdDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(data))


def read_csv(path, k_max=None) -> IpdDataset:
    return dataset_from_csv(Path(path).read_text(), k_max=k_max)


# --------------------------------------------------------------------------
# Subgroup summary tables


def _rate_key(t: float) -> str:
    return repr(float(t)).removesuffix(".0") if float(t).is_integer() else repr(float(t))


@dataclass
class SubgroupSummaryTable:
    """Published-style subgroup table: counts, medians, hazard ratios, rates.

    ``medians`` and ``counts`` are keyed by ``(x, a)``; ``hazard_ratios`` by
    ``x`` (arm 1 versus arm 0 within subgroup ``x``); ``rates`` maps a
    timepoint to per-``(x, a)`` survival-rate triples.
    """

    k_max: int
    counts: dict[tuple[int, int], int]
    medians: dict[tuple[int, int], SummaryTriple]
    hazard_ratios: dict[int, SummaryTriple]
    rates: dict[float, dict[tuple[int, int], SummaryTriple]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    def cells(self) -> list[tuple[int, int]]:
        return [(x, a) for x in range(self.k_max + 1) for a in (0, 1)]

    def median_array(self) -> np.ndarray:
        out = np.full((self.k_max + 1, 2, 3), np.nan)
        for (x, a), trip in self.medians.items():
            out[x, a] = trip.as_array()
        return out

    def hr_array(self) -> np.ndarray:
        out = np.full((self.k_max + 1, 3), np.nan)
        for x, trip in self.hazard_ratios.items():
            out[x] = trip.as_array()
        return out

    def rate_array(self, t: float) -> np.ndarray:
        out = np.full((self.k_max + 1, 2, 3), np.nan)
        for (x, a), trip in self.rates[t].items():
            out[x, a] = trip.as_array()
        return out

    def to_json(self) -> dict:
        cells = []
        for x, a in self.cells():
            entry = {
                "x": x,
                "a": a,
                "n": self.counts.get((x, a), 0),
                "median": self.medians.get((x, a), NOT_ESTIMABLE).to_json(),
            }
            if self.rates:
                entry["rates"] = {
                    _rate_key(t): tab.get((x, a), NOT_ESTIMABLE).to_json()
                    for t, tab in sorted(self.rates.items())
                }
            cells.append(entry)
        hrs = [
            {"x": x, "hr": self.hazard_ratios.get(x, NOT_ESTIMABLE).to_json()}
            for x in range(self.k_max + 1)
        ]
        return {"schema": SCHEMA_VERSION, "k_max": self.k_max, "cells": cells, "hazard_ratios": hrs}

    @classmethod
    def from_json(cls, obj: dict) -> "SubgroupSummaryTable":
        for key in ("cells", "hazard_ratios"):
            if key not in obj:
                raise ConfigError(f"summary table is missing field {key!r}")
        if obj.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported summary table schema {obj.get('schema')!r}")
        counts, medians = {}, {}
        rates: dict[float, dict] = {}
        top = 0
        for cell in obj["cells"]:
            try:
                x, a = int(cell["x"]), int(cell["a"])
                counts[(x, a)] = int(cell["n"])
                medians[(x, a)] = SummaryTriple.from_json(cell["median"])
            except KeyError as exc:
                raise ConfigError(f"summary cell is missing field {exc.args[0]!r}") from exc
            top = max(top, x)
            for key, trip in (cell.get("rates") or {}).items():
                rates.setdefault(float(key), {})[(x, a)] = SummaryTriple.from_json(trip)
        hrs = {}
        for entry in obj["hazard_ratios"]:
            hrs[int(entry["x"])] = SummaryTriple.from_json(entry["hr"])
            top = max(top, int(entry["x"]))
        k_max = int(obj.get("k_max", top))
        return cls(k_max, counts, medians, hrs, rates)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def load(cls, path) -> "SubgroupSummaryTable":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")
