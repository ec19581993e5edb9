"""Synthetic individual patient data from published Kaplan-Meier figures."""

from .data import (
    NE,
    IpdDataset,
    IpdRecord,
    NotEstimable,
    SubgroupSummaryTable,
    SummaryTriple,
    read_csv,
    write_csv,
)
from .survival import StepCurve, cox_fit, km_fit, km_median, summarize, survival_rate

__version__ = "0.1.0"

__all__ = [
    "NE",
    "IpdDataset",
    "IpdRecord",
    "NotEstimable",
    "StepCurve",
    "SubgroupSummaryTable",
    "SummaryTriple",
    "cox_fit",
    "km_fit",
    "km_median",
    "read_csv",
    "summarize",
    "survival_rate",
    "write_csv",
]
