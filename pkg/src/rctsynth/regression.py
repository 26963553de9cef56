"""OLS and logistic regression with Wald inference, plus response imputation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import special

from .data import Dataset
from .errors import NumericError, RankDeficientError, ValidationError

INTERCEPT = "(Intercept)"
FAMILIES = ("gaussian", "logistic")
_FAMILY_ALIASES = {
    "gaussian": "gaussian", "gaussian-linear": "gaussian", "linear": "gaussian", "ols": "gaussian",
    "logistic": "logistic", "binomial-logistic": "logistic", "binomial": "logistic",
    "logit": "logistic",
}


def normalize_family(name: str) -> str:
    try:
        return _FAMILY_ALIASES[name.lower()]
    except (KeyError, AttributeError):
        raise ValidationError(f"unknown outcome family {name!r}") from None


@lru_cache(maxsize=None)
def t_quantile(p: float, df: float) -> float:
    """Student-t quantile; ``df = inf`` gives the normal quantile."""
    if math.isinf(df):
        return float(special.ndtri(p))
    return float(special.stdtrit(df, p))


def t_two_sided_p(stat: np.ndarray, df: float) -> np.ndarray:
    stat = np.abs(np.asarray(stat, dtype=float))
    if math.isinf(df):
        return 2.0 * special.ndtr(-stat)
    return 2.0 * special.stdtr(df, -stat)


@dataclass(frozen=True)
class ModelSpec:
    """Regressors are ordered intercept, treatments, blocks, covariates.

    ``block_encoding="numeric"`` enters each block column as one numeric
    regressor; ``"dummies"`` expands it into one indicator per non-first level.
    """

    response: str
    treatments: tuple[str, ...] = ()
    blocks: tuple[str, ...] = ()
    covariates: tuple[str, ...] = ()
    family: str = "gaussian"
    block_encoding: str = "numeric"

    def __post_init__(self):
        object.__setattr__(self, "family", normalize_family(self.family))
        if self.block_encoding not in ("numeric", "dummies"):
            raise ValidationError(f"unknown block encoding {self.block_encoding!r}")

    @classmethod
    def from_schema(cls, schema, family: str = "gaussian", **kw) -> "ModelSpec":
        return cls(schema.response, tuple(schema.treatment_arms), tuple(schema.block_columns),
                   tuple(schema.covariates), family, **kw)

    def regressor_names(self, dataset: Dataset | None = None) -> list[str]:
        names = [INTERCEPT, *self.treatments]
        for b in self.blocks:
            if self.block_encoding == "dummies":
                levels = dataset.schema.column(b).levels
                names.extend(f"{b}[{lv}]" for lv in levels[1:])
            else:
                names.append(b)
        names.extend(self.covariates)
        return names

    def design_matrix(self, dataset: Dataset) -> np.ndarray:
        n = dataset.n
        cols = [np.ones(n)]
        cols.extend(dataset.numeric(t) for t in self.treatments)
        for b in self.blocks:
            if self.block_encoding == "dummies":
                idx = dataset[b]
                k = len(dataset.schema.column(b).levels)
                cols.extend((idx == j).astype(float) for j in range(1, k))
            else:
                cols.append(dataset.numeric(b))
        cols.extend(dataset.numeric(c) for c in self.covariates)
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {"response": self.response, "treatments": list(self.treatments),
                "blocks": list(self.blocks), "covariates": list(self.covariates),
                "family": self.family, "block_encoding": self.block_encoding}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelSpec":
        try:
            return cls(doc["response"], tuple(doc.get("treatments", ())),
                       tuple(doc.get("blocks", ())), tuple(doc.get("covariates", ())),
                       doc.get("family", "gaussian"), doc.get("block_encoding", "numeric"))
        except KeyError as exc:
            raise ValidationError(f"model spec lacks {exc.args[0]!r}") from None


@dataclass(frozen=True)
class FitResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    family: str
    df: float
    sigma2: float | None = None
    ci_lower: np.ndarray = field(default=None, repr=False)
    ci_upper: np.ndarray = field(default=None, repr=False)
    p_values: np.ndarray = field(default=None, repr=False)
    converged: bool = True
    separated: bool = False
    iterations: int = 0
    level: float = 0.95

    def index(self, name: str) -> int:
        return self.names.index(name)

    def table(self, names: Sequence[str] | None = None) -> list[dict]:
        """Coefficient rows: name, estimate, SE, CI bounds, p-value."""
        rows = []
        for j, name in enumerate(self.names):
            if names is not None and name not in names:
                continue
            rows.append({"name": name, "estimate": float(self.coef[j]),
                         "std_error": float(self.se[j]),
                         "ci_lower": float(self.ci_lower[j]), "ci_upper": float(self.ci_upper[j]),
                         "p_value": float(self.p_values[j])})
        return rows


def _inference(names, coef, se, family, df, level=0.95, **extra) -> FitResult:
    crit = t_quantile(0.5 + level / 2, df)
    half = crit * se
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = coef / se
    p = t_two_sided_p(stat, df)
    zero_se = se == 0
    if zero_se.any():
        p = np.where(zero_se, np.where(coef == 0, 1.0, 0.0), p)
    return FitResult(tuple(names), coef, se, family, df, ci_lower=coef - half,
                     ci_upper=coef + half, p_values=p, level=level, **extra)


def _check_rank(r_diag: np.ndarray, perm: np.ndarray, names: Sequence[str]) -> None:
    tol = np.finfo(float).eps * max(r_diag.shape[0], 1) * 100 * abs(r_diag[0]) if r_diag.size else 0
    small = np.flatnonzero(np.abs(r_diag) <= tol)
    if small.size:
        col = names[perm[small[0]]]
        raise RankDeficientError(
            f"design matrix is rank deficient; column '{col}' is collinear with earlier "
            f"regressors", column=col)


def ols(M: np.ndarray, y: np.ndarray, names: Sequence[str], level: float = 0.95) -> FitResult:
    """Least squares via pivoted QR with classical standard errors."""
    n, k = M.shape
    if n <= k:
        raise ValidationError(f"need more rows than regressors (n={n}, k={k})")
    Q, R, perm = scipy.linalg.qr(M, mode="economic", pivoting=True)
    _check_rank(np.diag(R), perm, names)
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(k)
    coef[perm] = z
    resid = y - M @ coef
    df = n - k
    sigma2 = float(resid @ resid) / df
    rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    diag = np.empty(k)
    diag[perm] = np.einsum("ij,ij->i", rinv, rinv)
    se = np.sqrt(sigma2 * diag)
    return _inference(names, coef, se, "gaussian", float(df), level, sigma2=sigma2)


def _loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # sum y*eta - log(1 + e^eta), stable
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic(M: np.ndarray, y: np.ndarray, names: Sequence[str], *, level: float = 0.95,
             tol: float = 1e-8, max_iter: int = 100, separation_bound: float = 30.0,
             trace: list | None = None) -> FitResult:
    """Maximum likelihood by iteratively reweighted least squares with step-halving."""
    n, k = M.shape
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic regression needs a 0/1 response")
    if y.min() == y.max():
        raise ValidationError("logistic regression needs both 0 and 1 responses")
    if n <= k:
        raise ValidationError(f"need more rows than regressors (n={n}, k={k})")
    _, R, perm = scipy.linalg.qr(M, mode="economic", pivoting=True)
    _check_rank(np.diag(R), perm, names)
    beta = np.zeros(k)
    eta = M @ beta
    ll = _loglik(eta, y)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        p = special.expit(eta)
        score = M.T @ (y - p)
        if trace is not None:
            trace.append(ll)
        if np.max(np.abs(score)) <= tol:
            converged = True
            it -= 1
            break
        w = p * (1 - p)
        info = M.T @ (M * w[:, None])
        try:
            step = scipy.linalg.solve(info, score, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            cand_eta = M @ cand
            cand_ll = _loglik(cand_eta, y)
            if cand_ll >= ll:
                break
            t *= 0.5
        else:
            # no ascent possible at machine precision: the current point is the optimum
            converged = bool(np.max(np.abs(score)) <= 1e-6 * max(n, 1))
            break
        beta, eta, ll = cand, cand_eta, cand_ll
        if np.max(np.abs(beta)) > separation_bound:
            separated = True
            break
    p = special.expit(eta)
    w = p * (1 - p)
    info = M.T @ (M * w[:, None])
    try:
        cov = scipy.linalg.inv(info)
    except (np.linalg.LinAlgError, ValueError):
        raise NumericError("observed information is singular") from None
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return _inference(names, beta, se, "logistic", math.inf, level,
                      converged=converged and not separated, separated=separated,
                      iterations=it)


def logistic_loglik(M: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    return _loglik(M @ beta, np.asarray(y, dtype=float))


def logistic_score(M: np.ndarray, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return M.T @ (np.asarray(y, dtype=float) - special.expit(M @ beta))


def fit_ols(dataset: Dataset, model: ModelSpec, level: float = 0.95) -> FitResult:
    return ols(model.design_matrix(dataset), dataset.numeric(model.response),
               model.regressor_names(dataset), level)


def fit_logistic(dataset: Dataset, model: ModelSpec, level: float = 0.95) -> FitResult:
    return logistic(model.design_matrix(dataset), dataset.numeric(model.response),
                    model.regressor_names(dataset), level=level)


def fit(dataset: Dataset, model: ModelSpec, level: float = 0.95) -> FitResult:
    if model.family == "logistic":
        return fit_logistic(dataset, model, level)
    return fit_ols(dataset, model, level)


def impute_response(M: np.ndarray, fit_result: FitResult, rng: np.random.Generator,
                    family: str | None = None) -> np.ndarray:
    """Draw a synthetic response from the fitted model at design rows ``M``."""
    family = normalize_family(family or fit_result.family)
    if M.shape[1] != fit_result.coef.shape[0]:
        raise ValidationError("design matrix columns do not match the fitted regressors")
    eta = M @ fit_result.coef
    if family == "gaussian":
        if fit_result.sigma2 is None:
            raise ValidationError("gaussian imputation needs a residual variance "
                                  "(fit is not a linear model)")
        return eta + rng.normal(0.0, math.sqrt(fit_result.sigma2), size=eta.shape[0])
    return (rng.random(eta.shape[0]) < special.expit(eta)).astype(float)
