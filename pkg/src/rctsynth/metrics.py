"""Utility metrics comparing inference on a private frame and a synthetic frame.

Metric 1  CI overlap indicator
Metric 2  private estimate inside the synthetic CI
Metric 3  CI overlap measure (average of overlap length over each CI length)
Metric 4  squared difference of point estimates
Metric 5  squared error of a covariate-only statistic
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset
from .errors import ValidationError
from .regression import FitResult

METRIC_COLUMNS = ("Metric 1", "Metric 2", "Metric 3", "Metric 4")


@dataclass(frozen=True)
class CIRecord:
    name: str
    estimate: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValidationError(f"interval for {self.name} has lower > upper")


def ci_overlap_indicator(a: CIRecord, b: CIRecord) -> int:
    return int(max(a.lower, b.lower) <= min(a.upper, b.upper))


def estimate_coverage(private_estimate: float, synthetic_ci: CIRecord) -> int:
    return int(synthetic_ci.lower <= private_estimate <= synthetic_ci.upper)


def ci_overlap_measure(a: CIRecord, b: CIRecord) -> float:
    len_a = a.upper - a.lower
    len_b = b.upper - b.lower
    if len_a <= 0 or len_b <= 0:
        raise ValidationError("overlap measure is undefined for zero-width intervals")
    overlap = min(a.upper, b.upper) - max(a.lower, b.lower)
    if overlap < 0:
        return 0.0
    return 0.5 * (overlap / len_a + overlap / len_b)


def squared_error(private_estimate: float, synthetic_estimate: float) -> float:
    return (private_estimate - synthetic_estimate) ** 2


@dataclass(frozen=True)
class PairMetrics:
    """Metrics 1-4 for every coefficient of one (private, synthetic) pair."""

    names: tuple[str, ...]
    overlap: np.ndarray
    coverage: np.ndarray
    overlap_measure: np.ndarray
    sq_error: np.ndarray


def compare_fits(private: FitResult, synthetic: FitResult) -> PairMetrics:
    """Vectorized Metrics 1-4 over all coefficients shared by both fits."""
    if private.names != synthetic.names:
        raise ValidationError("fits have different regressors; use the same model on both frames")
    L, U = private.ci_lower, private.ci_upper
    Ls, Us = synthetic.ci_lower, synthetic.ci_upper
    lo = np.maximum(L, Ls)
    hi = np.minimum(U, Us)
    overlap = (lo <= hi).astype(float)
    coverage = ((Ls <= private.coef) & (private.coef <= Us)).astype(float)
    width = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        measure = 0.5 * (width / (U - L) + width / (Us - Ls))
    measure = np.where(width < 0, 0.0, measure)
    if not np.all(np.isfinite(measure)):
        raise ValidationError("overlap measure is undefined for zero-width intervals")
    return PairMetrics(private.names, overlap, coverage, measure,
                       (private.coef - synthetic.coef) ** 2)


def _variance(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1))


def _mean(x: np.ndarray) -> float:
    return float(np.mean(x))


STATISTICS: dict[str, Callable[[np.ndarray], float]] = {"variance": _variance, "mean": _mean}


@dataclass(frozen=True)
class StatisticSpec:
    """A covariate statistic such as ``variance:x1``."""

    kind: str
    column: str

    @classmethod
    def parse(cls, text: str) -> "StatisticSpec":
        kind, sep, column = text.partition(":")
        if not sep or not column:
            raise ValidationError(f"statistic must look like 'variance:x1', got {text!r}")
        if kind not in STATISTICS:
            raise ValidationError(f"unknown statistic {kind!r}; choose from {sorted(STATISTICS)}")
        return cls(kind, column)

    def __str__(self) -> str:
        return f"{self.kind}:{self.column}"

    @property
    def label(self) -> str:
        return f"MSE of {self.kind.capitalize()} of {self.column}"

    def __call__(self, dataset: Dataset) -> float:
        if self.column not in dataset.schema:
            raise ValidationError(f"statistic column {self.column!r} not in frame")
        if dataset.schema.column(self.column).role != "covariate":
            raise ValidationError(f"statistic column {self.column!r} is not a covariate")
        return STATISTICS[self.kind](dataset.numeric(self.column))


def sensitive_stat_mse(stat: StatisticSpec | str, private: Dataset,
                       synthetics: Sequence[Dataset]) -> float:
    if isinstance(stat, str):
        stat = StatisticSpec.parse(stat)
    if not synthetics:
        raise ValidationError("need at least one synthetic frame")
    base = stat(private)
    return float(np.mean([(base - stat(s)) ** 2 for s in synthetics]))


@dataclass(frozen=True)
class MetricRow:
    name: str
    metric1: float
    metric2: float
    metric3: float
    metric4: float


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[MetricRow, ...]
    n_pairs: int
    metric5: float | None = None
    statistic: str | None = None
    warnings: dict[str, int] = field(default_factory=dict)

    def row(self, name: str) -> MetricRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = {"n_pairs": self.n_pairs,
               "coefficients": [{"name": r.name, "metric1": r.metric1, "metric2": r.metric2,
                                 "metric3": r.metric3, "metric4": r.metric4}
                                for r in self.rows]}
        if self.metric5 is not None:
            out["metric5"] = {"statistic": self.statistic, "mse": self.metric5}
        if self.warnings:
            out["warnings"] = dict(self.warnings)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_csv(self, aliases: dict[str, str] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Variable names", *METRIC_COLUMNS])
        for r in self.rows:
            name = (aliases or {}).get(r.name, r.name)
            w.writerow([name, *(format_number(v) for v in
                                (r.metric1, r.metric2, r.metric3, r.metric4))])
        return buf.getvalue()


def format_number(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    return format(float(value), ".10g")


def aggregate(pairs: Iterable[PairMetrics], *, metric5: float | None = None,
              statistic: str | None = None,
              warnings: dict[str, int] | None = None) -> MetricsReport:
    """Proportions for Metrics 1-2 and means for Metrics 3-4 over all pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("aggregate needs at least one pair")
    names = pairs[0].names
    stack = {attr: np.stack([getattr(p, attr) for p in pairs])
             for attr in ("overlap", "coverage", "overlap_measure", "sq_error")}
    rows = tuple(
        MetricRow(name, float(stack["overlap"][:, j].mean()),
                  float(stack["coverage"][:, j].mean()),
                  float(stack["overlap_measure"][:, j].mean()),
                  float(stack["sq_error"][:, j].mean()))
        for j, name in enumerate(names))
    return MetricsReport(rows, len(pairs), metric5, statistic, dict(warnings or {}))
