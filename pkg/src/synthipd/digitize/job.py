"""JSON job files for the digitize step.

A job names one SVG per arm (or a single shared SVG), a selector for each
arm's curve and censor marks, the axis calibration (or ``"embedded"``), the
at-risk table and the seed for censor placement::

    {
      "schema": 1,
      "svg": "figure.svg",
      "calibration": "embedded",
      "arms": {"0": {"selector": {"id": "km-arm0"}, "ticks": {"class": "censor arm0"}},
               "1": {"selector": {"stroke": "#d62728"}}},
      "risk_table": {"grid": [0, 6, 12], "at_risk": {"0": [250, 180, 90], "1": [250, 200, 140]}},
      "seed": 7,
      "method": "sequential"
    }

Relative paths resolve against the job file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..data import SCHEMA_VERSION
from ..errors import ConfigError
from .reconstruct import DigitizationReport, RiskTable, digitize
from .svg import AxisCalibration, DigitizedCurve, parse_svg


@dataclass
class DigitizeJob:
    svgs: dict[int, bytes]
    calibration: AxisCalibration | None
    selectors: dict[int, dict]
    tick_selectors: dict[int, dict]
    risk: RiskTable
    seed: int | None = None
    tick_max_px: float = 12.0
    method: str = "sequential"

    @classmethod
    def from_json(cls, obj: dict, base_dir=".") -> "DigitizeJob":
        base = Path(base_dir)
        if obj.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported digitize job schema {obj.get('schema')!r}")
        for key in ("arms", "risk_table"):
            if key not in obj:
                raise ConfigError(f"digitize job is missing {key!r}")
        arms = {int(a): spec for a, spec in obj["arms"].items()}
        if set(arms) != {0, 1}:
            raise ConfigError("digitize job needs entries for arms 0 and 1")
        svgs, selectors, ticks = {}, {}, {}
        for a, spec in arms.items():
            path = spec.get("svg", obj.get("svg"))
            if path is None:
                raise ConfigError(f"arm {a} has no 'svg' and the job has no shared 'svg'")
            path = base / path
            if not path.is_file():
                raise ConfigError(f"arm {a} SVG file not found: {path}")
            svgs[a] = path.read_bytes()
            if "selector" not in spec:
                raise ConfigError(f"arm {a} is missing 'selector'")
            selectors[a] = spec["selector"]
            if spec.get("ticks") is not None:
                ticks[a] = spec["ticks"]
        cal = obj.get("calibration", "embedded")
        calibration = None if cal == "embedded" else AxisCalibration.from_json(cal)
        return cls(
            svgs, calibration, selectors, ticks, RiskTable.from_json(obj["risk_table"]),
            obj.get("seed"), float(obj.get("tick_max_px", 12.0)), obj.get("method", "sequential"),
        )

    @classmethod
    def load(cls, path) -> "DigitizeJob":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_json(obj, path.parent)

    def curves(self) -> dict[int, DigitizedCurve]:
        out = {}
        for a in (0, 1):
            tick = {a: self.tick_selectors[a]} if a in self.tick_selectors else None
            out.update(parse_svg(self.svgs[a], self.calibration, {a: self.selectors[a]}, tick, self.tick_max_px))
        return out

    def run(self, seed=None):
        """Parse the figures and rebuild the records; ``seed`` overrides the job's."""
        return digitize(self.curves(), self.risk, self.seed if seed is None else seed, self.method)
