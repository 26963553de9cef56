"""Monte-Carlo study harness: many private frames, many syntheses each.

Task ``(i, r, e)`` synthesizes replicate ``r`` of private frame ``i`` at the
``e``-th epsilon. Private frame ``i`` is drawn from stream ``(0, i)`` and the
synthesis from stream ``(1, i, r, e)`` under the master seed (see
:mod:`rctsynth.seeding`), so results do not depend on how tasks are spread
over workers. Reduction is ordered by ``(i, r)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Any, Mapping

import numpy as np

from .data import Dataset, parse_schema
from .design import DesignSpec, infer_design
from .errors import ValidationError
from .fixtures import LiberiaShapedDGP
from .metrics import (MetricsReport, PairMetrics, StatisticSpec, aggregate, compare_fits,
                      format_number)
from .regression import ModelSpec, fit
from .seeding import derive_seed, rng_for
from .synthesis import (SynthesisConfig, epsilon_label, parse_epsilon, parse_zeta,
                        synthesize)

DEFAULT_EPSILONS = (0.1, 0.5, 1.0, math.inf)
BUNDLED_STUDIES = ("sim-study-1-uniform", "sim-study-1-beta", "sim-study-2",
                   "liberia-shaped-fixture", "sim-study-1-beta-declared")


@dataclass(frozen=True)
class CovariateDGP:
    name: str
    dist: str
    params: tuple[float, ...]
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.dist in ("uniform", "beta"):
            if len(self.params) != 2:
                raise ValidationError(f"{self.dist} covariate {self.name} needs two parameters")
            if self.dist == "uniform" and not self.params[0] < self.params[1]:
                raise ValidationError(f"uniform covariate {self.name} needs a < b")
            if self.dist == "beta" and min(self.params) <= 0:
                raise ValidationError(f"beta covariate {self.name} needs positive shapes")
        elif self.dist == "categorical":
            p = np.asarray(self.params, dtype=float)
            if p.size < 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise ValidationError(
                    f"categorical covariate {self.name}: probabilities must sum to 1")
            if self.levels is not None and len(self.levels) != p.size:
                raise ValidationError(f"categorical covariate {self.name}: level count mismatch")
        else:
            raise ValidationError(f"unknown distribution {self.dist!r} for {self.name}")

    @property
    def bounds(self) -> tuple[float, float] | None:
        if self.dist == "uniform":
            return self.params
        if self.dist == "beta":
            return (0.0, 1.0)
        return None

    def column(self) -> dict:
        if self.dist == "categorical":
            levels = self.levels or tuple(str(i) for i in range(1, len(self.params) + 1))
            return {"name": self.name, "role": "covariate", "kind": "discrete",
                    "levels": list(levels)}
        return {"name": self.name, "role": "covariate", "kind": "continuous",
                "bounds": list(self.bounds)}

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.dist == "uniform":
            return rng.uniform(self.params[0], self.params[1], size=n)
        if self.dist == "beta":
            return rng.beta(self.params[0], self.params[1], size=n)
        return rng.choice(len(self.params), size=n, p=np.asarray(self.params))


@dataclass(frozen=True)
class DGPSpec:
    """Linear model data: y = intercept + effect * t + sum(gamma * x) + N(0, sigma^2)."""

    n: int
    covariates: tuple[CovariateDGP, ...]
    intercept: float
    treatment_effect: float
    coefficients: tuple[float, ...]
    residual_variance: float
    treatment: str = "t1"
    response: str = "y"
    treatment_probability: float = 0.5

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError("DGP needs n >= 2")
        if self.residual_variance < 0:
            raise ValidationError("residual variance must be >= 0")
        if len(self.coefficients) != len(self.covariates):
            raise ValidationError("one coefficient per covariate is required")
        if not 0 <= self.treatment_probability <= 1:
            raise ValidationError("treatment probability must lie in [0, 1]")

    @property
    def schema(self):
        cols = [{"name": self.response, "role": "response", "kind": "continuous"},
                {"name": self.treatment, "role": "treatment"}]
        cols += [c.column() for c in self.covariates]
        return parse_schema({"columns": cols})

    def model(self, family: str = "gaussian") -> ModelSpec:
        return ModelSpec(self.response, (self.treatment,), (),
                         tuple(c.name for c in self.covariates), family)

    def design_variant(self) -> str:
        return "simple"

    def design(self) -> DesignSpec:
        p = self.treatment_probability
        return DesignSpec("simple", (self.treatment,),
                          probabilities={self.treatment: p, "control": 1 - p})

    def describe(self) -> dict:
        return {"kind": "linear", "n": self.n,
                "covariates": [{"name": c.name, "dist": c.dist, "params": list(c.params)}
                               for c in self.covariates],
                "intercept": self.intercept, "treatment_effect": self.treatment_effect,
                "coefficients": list(self.coefficients),
                "residual_variance": self.residual_variance}

    def generate(self, rng: np.random.Generator) -> Dataset:
        n = self.n
        t = (rng.random(n) < self.treatment_probability).astype(np.int64)
        columns: dict[str, np.ndarray] = {self.treatment: t}
        schema = self.schema
        y = self.intercept + self.treatment_effect * t
        for cov, gamma in zip(self.covariates, self.coefficients):
            values = cov.draw(rng, n)
            columns[cov.name] = values
            spec = schema.column(cov.name)
            numeric = values if spec.is_continuous else spec.numeric_levels[values]
            y = y + gamma * numeric
        y = y + rng.normal(0.0, math.sqrt(self.residual_variance), size=n)
        columns[self.response] = y
        return Dataset.from_arrays(schema, columns, dp_mode=True)


def generate_private(dgp: DGPSpec | LiberiaShapedDGP, rng: np.random.Generator) -> Dataset:
    return dgp.generate(rng)


def parse_dgp(doc: Mapping[str, Any]) -> DGPSpec | LiberiaShapedDGP:
    kind = doc.get("kind", "linear")
    if kind == "liberia-shaped":
        return LiberiaShapedDGP(int(doc.get("n", 999)))
    if kind != "linear":
        raise ValidationError(f"unknown DGP kind {kind!r}")
    try:
        covs = []
        for c in doc["covariates"]:
            dist = c["dist"]
            if dist == "categorical":
                params = tuple(float(v) for v in c["probabilities"])
                levels = tuple(str(v) for v in c["levels"]) if "levels" in c else None
            else:
                params = (float(c["a"]), float(c["b"]))
                levels = None
            covs.append(CovariateDGP(c["name"], dist, params, levels))
        return DGPSpec(int(doc["n"]), tuple(covs), float(doc["intercept"]),
                       float(doc["treatment_effect"]),
                       tuple(float(v) for v in doc["coefficients"]),
                       float(doc["residual_variance"]), doc.get("treatment", "t1"),
                       doc.get("response", "y"), float(doc.get("treatment_probability", 0.5)))
    except KeyError as exc:
        raise ValidationError(f"DGP lacks field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"malformed DGP: {exc}") from None


@dataclass(frozen=True)
class StudyConfig:
    dgp: DGPSpec | LiberiaShapedDGP
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    n_private: int = 100
    n_synthetic_per_private: int = 20
    zeta: Fraction | float = Fraction(2, 3)
    outcome_family: str = "gaussian"
    statistic: StatisticSpec | None = None
    seed: int = 0
    name: str = "study"
    aliases: Mapping[str, str] = field(default_factory=dict)
    support: str = "declared"

    def __post_init__(self):
        if self.support not in ("declared", "observed"):
            raise ValidationError(f"unknown support {self.support!r}")
        if self.n_private < 1 or self.n_synthetic_per_private < 1:
            raise ValidationError("n_private and n_synthetic_per_private must be >= 1")
        if not self.epsilons:
            raise ValidationError("need at least one epsilon")

    def echo(self) -> dict:
        return {"name": self.name, "dgp": self.dgp.describe(),
                "epsilons": [epsilon_label(e) for e in self.epsilons],
                "n_private": self.n_private,
                "n_synthetic_per_private": self.n_synthetic_per_private,
                "zeta": str(self.zeta), "outcome_family": self.outcome_family,
                "sensitive_statistic": str(self.statistic) if self.statistic else None,
                "seed": self.seed, "support": self.support, "aliases": dict(self.aliases)}


def parse_study(doc: Mapping[str, Any] | str) -> StudyConfig:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"study config is not valid JSON: {exc}") from None
    if "dgp" not in doc:
        raise ValidationError("study config lacks 'dgp'")
    stat = doc.get("sensitive_statistic")
    try:
        return StudyConfig(
            dgp=parse_dgp(doc["dgp"]),
            epsilons=tuple(parse_epsilon(e) for e in doc.get("epsilons", DEFAULT_EPSILONS)),
            n_private=int(doc.get("n_private", 100)),
            n_synthetic_per_private=int(doc.get("n_synthetic_per_private", 20)),
            zeta=parse_zeta(doc.get("zeta", "2/3")),
            outcome_family=doc.get("outcome_family", "gaussian"),
            statistic=StatisticSpec.parse(stat) if stat else None,
            seed=int(doc.get("seed", 0)),
            name=doc.get("name", "study"),
            aliases=dict(doc.get("aliases", {})),
            support=doc.get("support", "declared"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed study config: {exc}") from None


def load_bundled_study(name: str) -> StudyConfig:
    if name not in BUNDLED_STUDIES:
        raise ValidationError(f"no bundled study {name!r}; choose from {BUNDLED_STUDIES}")
    text = resources.files("rctsynth").joinpath("configs", f"{name}.json").read_text("utf-8")
    return parse_study(text)


@dataclass
class _PrivateResult:
    pairs: list[list[PairMetrics]]          # per epsilon, ordered by replicate
    stat_errors: list[list[float]]
    degenerate: list[int]
    nonconverged: list[int]


def _run_private(cfg: StudyConfig, i: int, synth_kwargs: Mapping | None = None) -> _PrivateResult:
    dgp = cfg.dgp
    private = generate_private(dgp, rng_for(cfg.seed, 0, i))
    model = dgp.model()
    analysis_fit = fit(private, model)
    if cfg.outcome_family == model.family:
        private_fit = analysis_fit
    else:
        private_fit = fit(private, ModelSpec(model.response, model.treatments, model.blocks,
                                             model.covariates, cfg.outcome_family,
                                             model.block_encoding))
    design = dgp.design() if isinstance(dgp, DGPSpec) else infer_design(private, "stratified")
    base_stat = cfg.statistic(private) if cfg.statistic else None
    result = _PrivateResult([], [], [], [])
    for e, eps in enumerate(cfg.epsilons):
        pairs, errs, degenerate, nonconv = [], [], 0, 0
        for r in range(cfg.n_synthetic_per_private):
            scfg = SynthesisConfig(eps, cfg.zeta, cfg.outcome_family, design,
                                   seed=derive_seed(cfg.seed, 1, i, r, e), support=cfg.support)
            out = synthesize(private, model, scfg, private_fit=private_fit,
                             **(synth_kwargs or {}))
            pairs.append(compare_fits(analysis_fit, out.released_fit))
            if base_stat is not None:
                errs.append((base_stat - cfg.statistic(out.synthetic)) ** 2)
            degenerate += int(out.histogram.degenerate)
            nonconv += int(not out.released_fit.converged)
        result.pairs.append(pairs)
        result.stat_errors.append(errs)
        result.degenerate.append(degenerate)
        result.nonconverged.append(nonconv)
    return result


def _run_private_star(args):
    return _run_private(*args)


@dataclass
class StudyResult:
    config: StudyConfig
    reports: dict[str, MetricsReport]       # keyed by epsilon label ("0.1", ..., "inf")

    def report(self, epsilon: float) -> MetricsReport:
        return self.reports[_eps_key(epsilon)]

    def metric5(self) -> dict[str, float | None]:
        return {k: r.metric5 for k, r in self.reports.items()}

    def to_dict(self) -> dict:
        return {"config": self.config.echo(),
                "results": {k: r.to_dict() for k, r in self.reports.items()}}

    def table1_csv(self) -> str:
        """All epsilons stacked: privacy budget, coefficient, Metrics 1-4."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Privacy budget", "Variable names", "Table name",
                    "Metric 1", "Metric 2", "Metric 3", "Metric 4"])
        for key, rep in self.reports.items():
            for row in rep.rows:
                w.writerow([key, row.name, self.config.aliases.get(row.name, row.name),
                            *(format_number(v) for v in
                              (row.metric1, row.metric2, row.metric3, row.metric4))])
        return buf.getvalue()

    def table2_csv(self) -> str:
        """Metric 5 across epsilons in one row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = list(self.reports)
        w.writerow(["Privacy budget", *[("Non-DP synthesis" if k == "inf" else f"epsilon = {k}")
                                        for k in keys]])
        stat = self.config.statistic
        w.writerow([stat.label if stat else "MSE",
                    *(format_number(self.reports[k].metric5) if self.reports[k].metric5
                      is not None else "NA" for k in keys)])
        return buf.getvalue()

    def write(self, outdir: str | os.PathLike) -> dict[str, str]:
        os.makedirs(outdir, exist_ok=True)
        paths = {"metrics": os.path.join(outdir, "metrics.csv"),
                 "metric5": os.path.join(outdir, "metric5.csv"),
                 "json": os.path.join(outdir, "study.json")}
        with open(paths["metrics"], "w", encoding="utf-8", newline="") as fh:
            fh.write(self.table1_csv())
        with open(paths["metric5"], "w", encoding="utf-8", newline="") as fh:
            fh.write(self.table2_csv())
        with open(paths["json"], "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        for key, rep in self.reports.items():
            p = os.path.join(outdir, f"metrics_eps_{key}.csv")
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(rep.to_csv(self.config.aliases))
            paths[f"eps_{key}"] = p
        return paths


def _eps_key(eps: float) -> str:
    return "inf" if math.isinf(eps) else format(eps, "g")


def run_study(cfg: StudyConfig, *, threads: int = 1,
              synth_kwargs: Mapping | None = None) -> StudyResult:
    """Run the full protocol and aggregate one report per epsilon."""
    jobs = [(cfg, i, synth_kwargs) for i in range(cfg.n_private)]
    if threads > 1 and cfg.n_private > 1:
        if synth_kwargs:
            raise ValidationError("custom synthesis hooks require threads=1")
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_private_star, jobs, chunksize=1))
    else:
        results = [_run_private_star(job) for job in jobs]
    reports = {}
    for e, eps in enumerate(cfg.epsilons):
        pairs = [p for res in results for p in res.pairs[e]]
        m5 = None
        if cfg.statistic is not None:
            m5 = float(np.mean([x for res in results for x in res.stat_errors[e]]))
        warnings = {}
        degenerate = sum(res.degenerate[e] for res in results)
        if degenerate:
            warnings["degenerate_histograms"] = degenerate
        nonconv = sum(res.nonconverged[e] for res in results)
        if nonconv:
            warnings["nonconverged_fits"] = nonconv
        reports[_eps_key(eps)] = aggregate(
            pairs, metric5=m5, statistic=str(cfg.statistic) if cfg.statistic else None,
            warnings=warnings)
    return StudyResult(cfg, reports)
