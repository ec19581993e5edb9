"""Figure digitization: SVG parsing and per-patient reconstruction."""

from .job import DigitizeJob
from .reconstruct import (
    DigitizationReport,
    IntervalEstimate,
    RiskTable,
    digitize,
    distribute_events,
    estimate_interval_events,
)
from .svg import AxisCalibration, DigitizedCurve, parse_path, parse_svg, parse_transform

__all__ = [
    "AxisCalibration",
    "DigitizationReport",
    "DigitizeJob",
    "DigitizedCurve",
    "IntervalEstimate",
    "RiskTable",
    "digitize",
    "distribute_events",
    "estimate_interval_events",
    "parse_path",
    "parse_svg",
    "parse_transform",
]
