"""End-to-end synthesis of a protected RCT frame and its released inference.

The covariates are resampled from a Laplace-perturbed histogram, treatments
are re-randomized under the study design, block columns pass through, and the
response is imputed from the model fitted on the private frame. The model is
then refit on the synthetic frame and only those treatment estimates are
released.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .data import Dataset, Schema, with_observed_bounds, write_csv
from .design import AssignmentMatrix, DesignSpec, assign, infer_design
from .errors import ValidationError
from .histogram import (DEFAULT_MAX_CELLS, BinGrid, PerturbedHistogram, build_grid,
                        count_cells, perturb, sample_covariates)
from .regression import FitResult, ModelSpec, fit, impute_response, normalize_family
from .seeding import derive_seed, seed_sequence

MECHANISM = f"perturbed-histogram/laplace-2-over-epsilon rctsynth {__version__}"
CAVEAT = ("Covariates in the synthetic frame are epsilon-DP. The released treatment "
          "estimates are computed on the synthetic frame, whose response was imputed "
          "from a model fit on the private data; those estimates carry no DP guarantee "
          "of their own. Treatment assignments and block columns are not protected.")
SUPPORTS = ("declared", "observed")
OBSERVED_SUPPORT_WARNING = ("grid support for continuous covariates was taken from the observed "
                            "data range; data-dependent bounds are not covered by the epsilon-DP "
                            "guarantee")
BUDGET_NOTE = ("epsilon is the budget of this single release; further releases from the "
               "same private data consume additional budget")


def parse_zeta(value: str | float | Fraction) -> Fraction | float:
    """Accept decimals or exact fractions such as ``"2/3"``."""
    if isinstance(value, (Fraction, float, int)) and not isinstance(value, bool):
        z = value
    else:
        text = str(value).strip()
        try:
            z = Fraction(text) if "/" in text else float(text)
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"cannot parse zeta {value!r}") from None
    if not 0 < z <= 1:
        raise ValidationError(f"zeta must lie in (0, 1], got {value}")
    return z


def parse_epsilon(value: str | float) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "∞", "non-dp"):
        return math.inf
    try:
        eps = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"cannot parse epsilon {value!r}") from None
    if not eps > 0:
        raise ValidationError(f"epsilon must be positive or inf, got {value}")
    return eps


def epsilon_label(eps: float) -> str | float:
    return "inf" if math.isinf(eps) else eps


@dataclass(frozen=True)
class SynthesisConfig:
    epsilon: float = 1.0
    zeta: Fraction | float = Fraction(2, 3)
    outcome_family: str = "gaussian"
    design: DesignSpec | None = None
    design_variant: str | None = None
    seed: int = 0
    n_out: int | None = None
    bin_scale: float = 1.0
    max_cells: int = DEFAULT_MAX_CELLS
    support: str = "declared"

    def __post_init__(self):
        if self.support not in SUPPORTS:
            raise ValidationError(f"support must be one of {SUPPORTS}, got {self.support!r}")
        object.__setattr__(self, "epsilon", parse_epsilon(self.epsilon))
        object.__setattr__(self, "zeta", parse_zeta(self.zeta))
        object.__setattr__(self, "outcome_family", normalize_family(self.outcome_family))
        if self.n_out is not None and self.n_out < 1:
            raise ValidationError("n_out must be >= 1")

    def echo(self) -> dict[str, Any]:
        return {"epsilon": epsilon_label(self.epsilon), "zeta": str(self.zeta),
                "outcome_family": self.outcome_family, "seed": self.seed,
                "n_out": self.n_out, "bin_scale": self.bin_scale, "support": self.support,
                "design_variant": self.design.variant if self.design else self.design_variant}


@dataclass
class SynthesisOutput:
    synthetic: Dataset
    released_fit: FitResult
    private_fit: FitResult = field(repr=False)
    model: ModelSpec
    config: SynthesisConfig
    design: DesignSpec = field(repr=False)
    grid: BinGrid = field(repr=False)
    histogram: PerturbedHistogram = field(repr=False)
    warnings: list[str] = field(default_factory=list)

    def release(self) -> dict[str, Any]:
        """Release document: treatment estimates from the synthetic refit only."""
        treatments = list(self.model.treatments)
        design = {"variant": self.design.variant, "arms": list(self.design.arms)}
        if self.design.block_columns:
            design["block_columns"] = list(self.design.block_columns)
        continuous = [d.bins for d in self.grid.dims if d.kind == "continuous"]
        return {
            "mechanism": MECHANISM,
            "config": self.config.echo(),
            "n": self.synthetic.n,
            "model": self.model.to_dict(),
            "design": design,
            "grid": {"cells": self.grid.q,
                     "bins_per_continuous": continuous[0] if continuous else None},
            "coefficients": self.released_fit.table(treatments),
            "interval": {"level": self.released_fit.level,
                         "reference": "student-t" if self.released_fit.family == "gaussian"
                         else "normal"},
            "privacy": {"epsilon": epsilon_label(self.config.epsilon),
                        "budget": BUDGET_NOTE, "caveat": CAVEAT},
            "warnings": list(self.warnings),
        }


CovariateSampler = Callable[[PerturbedHistogram, BinGrid, int, np.random.Generator],
                            Mapping[str, np.ndarray]]
Assigner = Callable[[DesignSpec, int, np.random.Generator], AssignmentMatrix]


def default_variant(schema: Schema) -> str:
    return "stratified" if schema.block_columns else "complete"


def _grid_schema(dataset: Dataset, epsilon: float, support: str = "declared") -> Schema:
    schema = dataset.schema
    if support == "observed":
        bare = {c.name: replace(c, lower=None, upper=None) for c in schema.columns
                if c.role == "covariate" and c.is_continuous}
        return with_observed_bounds(schema.with_columns(bare), dataset, schema.covariates)
    if math.isinf(epsilon):
        return with_observed_bounds(schema, dataset, schema.covariates)
    schema.require_bounds()
    return schema


def _response_column(values: np.ndarray, schema: Schema, family: str) -> np.ndarray:
    spec = schema.column(schema.response)
    if spec.is_continuous:
        return values
    if family != "logistic":
        raise ValidationError("discrete response requires the logistic outcome family",
                              column=spec.name)
    numeric = spec.numeric_levels
    index = {float(v): i for i, v in enumerate(numeric)}
    try:
        return np.array([index[float(v)] for v in values], dtype=np.int64)
    except KeyError:
        raise ValidationError("response levels must include 0 and 1", column=spec.name) from None


def _pass_through_blocks(dataset: Dataset, n_out: int,
                         rng: np.random.Generator) -> dict[str, np.ndarray]:
    blocks = dataset.schema.block_columns
    if not blocks:
        return {}
    if n_out == dataset.n:
        rows = rng.permutation(dataset.n)
    else:
        rows = rng.integers(0, dataset.n, size=n_out)
    return {b: dataset[b][rows] for b in blocks}


def synthesize(dataset: Dataset, model: ModelSpec, cfg: SynthesisConfig, *,
               private_fit: FitResult | None = None,
               covariate_sampler: CovariateSampler | None = None,
               assigner: Assigner | None = None) -> SynthesisOutput:
    """Produce one protected frame and its released fit.

    ``private_fit`` lets callers reuse a fit of ``model`` on ``dataset``.
    ``covariate_sampler`` and ``assigner`` replace the resampling and
    re-randomization steps (used to check the pipeline's identity limit).
    """
    schema = dataset.schema
    for name in (model.response, *model.treatments, *model.blocks, *model.covariates):
        if name not in schema:
            raise ValidationError(f"model refers to unknown column {name!r}")
    n = dataset.n
    n_out = cfg.n_out or n
    streams = seed_sequence(cfg.seed).spawn(5)
    rng_noise, rng_sample, rng_assign, rng_blocks, rng_impute = (
        np.random.default_rng(s) for s in streams)
    warnings: list[str] = []

    # covariates: histogram, Laplace noise, resampling
    if cfg.support == "observed" and not math.isinf(cfg.epsilon):
        warnings.append(OBSERVED_SUPPORT_WARNING)
    grid = build_grid(_grid_schema(dataset, cfg.epsilon, cfg.support), n, cfg.zeta,
                      scale=cfg.bin_scale, max_cells=cfg.max_cells)
    counts = count_cells(dataset, grid)
    if counts.clamped:
        warnings.append(f"{counts.clamped} covariate value(s) outside grid support were clamped")
    hist = perturb(counts, grid, cfg.epsilon, rng_noise)
    if hist.degenerate:
        warnings.append("perturbed histogram had no positive mass; covariates drawn "
                        "uniformly over all cells")
    sampler = covariate_sampler or sample_covariates
    covariates = sampler(hist, grid, n_out, rng_sample)

    # treatments (and strata) from the design
    design = cfg.design or infer_design(dataset, cfg.design_variant or default_variant(schema))
    assignment = (assigner or assign)(design, n_out, rng_assign)
    columns: dict[str, np.ndarray] = {}
    columns.update(covariates)
    if design.variant == "stratified":
        columns.update(assignment.columns())
    else:
        columns.update({a: assignment.dummies[:, k] for k, a in enumerate(assignment.arms)})
        columns.update(_pass_through_blocks(dataset, n_out, rng_blocks))

    # response from the private fit
    fam = cfg.outcome_family
    if private_fit is None:
        private_fit = fit(dataset, ModelSpec(model.response, model.treatments, model.blocks,
                                             model.covariates, fam, model.block_encoding))
    if fam == "logistic" and not private_fit.converged:
        warnings.append("logistic fit on private data did not converge"
                        + (" (separation)" if private_fit.separated else ""))
    resp_spec = schema.column(schema.response)
    columns[schema.response] = (np.zeros(n_out) if resp_spec.is_continuous
                                else np.zeros(n_out, dtype=np.int64))
    staged = Dataset.from_arrays(schema, columns, validate=False)
    M = model.design_matrix(staged)
    y = impute_response(M, private_fit, rng_impute, fam)
    columns[schema.response] = _response_column(y, schema, fam)
    synthetic = Dataset.from_arrays(schema, columns, validate=False)

    released = fit(synthetic, model)
    if released.family == "logistic" and not released.converged:
        warnings.append("logistic refit on synthetic data did not converge")
    return SynthesisOutput(synthetic, released, private_fit, model, cfg, design, grid, hist,
                           warnings)


def synthesize_responses(frames: Sequence[Dataset], models: Sequence[ModelSpec],
                         cfg: SynthesisConfig) -> list[SynthesisOutput]:
    """One independent synthesis per response frame, seeded by response index."""
    out = []
    for k, (frame, model) in enumerate(zip(frames, models)):
        sub = SynthesisConfig(cfg.epsilon, cfg.zeta, model.family, cfg.design,
                              cfg.design_variant, derive_seed(cfg.seed, k), cfg.n_out,
                              cfg.bin_scale, cfg.max_cells, cfg.support)
        out.append(synthesize(frame, model, sub))
    return out


def write_release_bundle(output: SynthesisOutput, outdir: str | os.PathLike) -> dict[str, str]:
    """Write ``synthetic.csv`` and ``release.json``; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "synthetic.csv")
    json_path = os.path.join(outdir, "release.json")
    write_csv(output.synthetic, csv_path)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(output.release(), fh, indent=2)
        fh.write("\n")
    return {"synthetic": csv_path, "release": json_path}
