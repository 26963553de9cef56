"""Differentially private synthetic data for randomized controlled trials."""

__version__ = "0.1.0"

from .data import ColumnSpec, Dataset, Schema, load_dataset, parse_schema, write_csv
from .errors import NumericError, RankDeficientError, ValidationError
from .metrics import MetricsReport, aggregate, compare_fits, sensitive_stat_mse
from .regression import FitResult, ModelSpec, fit_logistic, fit_ols
from .synthesis import SynthesisConfig, SynthesisOutput, synthesize

__all__ = [
    "ColumnSpec", "Dataset", "Schema", "load_dataset", "parse_schema", "write_csv",
    "NumericError", "RankDeficientError", "ValidationError",
    "MetricsReport", "aggregate", "compare_fits", "sensitive_stat_mse",
    "FitResult", "ModelSpec", "fit_logistic", "fit_ols",
    "SynthesisConfig", "SynthesisOutput", "synthesize",
]
