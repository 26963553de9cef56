import math
from fractions import Fraction

import numpy as np
import pytest

from rctsynth.data import Dataset, parse_schema
from rctsynth.errors import RankDeficientError, ValidationError
from rctsynth.regression import (INTERCEPT, ModelSpec, fit, impute_response, logistic,
                                 logistic_loglik, logistic_score, normalize_family, ols,
                                 t_quantile)

from oracles import normal_equation_oracle

T_TABLE = {1: 12.706205, 5: 2.570582, 10: 2.228139, 30: 2.042272, 100: 1.983972,
           math.inf: 1.959964}


def design(x):
    x = np.asarray(x, dtype=float)
    return np.column_stack([np.ones_like(x), x])


def test_perfect_fit():
    res = ols(design([0, 1, 2]), np.array([0.0, 2.0, 4.0]), ["a", "b"])
    assert np.allclose(res.coef, [0, 2], atol=1e-14)
    assert res.sigma2 == pytest.approx(0, abs=1e-28)
    assert res.p_values[1] < 1e-10


def test_zero_standard_error_p_values():
    from rctsynth.regression import _inference
    res = _inference(["a", "b"], np.array([1.5, 0.0]), np.zeros(2), "gaussian", 5.0)
    assert res.p_values.tolist() == [0.0, 1.0]


def test_hand_computed_normal_equations():
    res = ols(design([0, 1, 2]), np.array([1.0, 3.0, 4.0]), ["a", "b"])
    assert res.coef[0] == pytest.approx(7 / 6, rel=1e-14)
    assert res.coef[1] == pytest.approx(3 / 2, rel=1e-14)
    # oracle in exact rational arithmetic
    M = [[Fraction(1), Fraction(v)] for v in (0, 1, 2)]
    assert normal_equation_oracle(M, [Fraction(1), Fraction(3), Fraction(4)]) == [
        Fraction(7, 6), Fraction(3, 2)]


def test_ols_matches_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, k = int(rng.integers(10, 51)), int(rng.integers(1, 9))
        M = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        y = rng.normal(size=n)
        ref = np.array(normal_equation_oracle(M.tolist(), y.tolist()))
        got = ols(M, y, [str(j) for j in range(k)]).coef
        assert np.allclose(got, ref, rtol=1e-8, atol=0)


def test_residuals_orthogonal():
    rng = np.random.default_rng(1)
    M = np.column_stack([np.ones(200), rng.normal(size=(200, 4))])
    y = rng.normal(size=200)
    res = ols(M, y, list("abcde"))
    r = y - M @ res.coef
    assert np.max(np.abs(M.T @ r)) <= 1e-8 * 200


def test_sign_flip_symmetry():
    rng = np.random.default_rng(2)
    M = np.column_stack([np.ones(60), rng.normal(size=(60, 2))])
    y = M @ [0.5, 0.3, -0.2] + rng.normal(size=60)
    a = ols(M, y, list("abc"))
    M2 = M.copy()
    M2[:, 1] *= -1
    b = ols(M2, y, list("abc"))
    assert b.coef[1] == pytest.approx(-a.coef[1], rel=1e-12)
    assert b.se[1] == pytest.approx(a.se[1], rel=1e-12)
    assert b.p_values[1] == pytest.approx(a.p_values[1], rel=1e-10)
    assert np.all((a.p_values >= 0) & (a.p_values <= 1))


def test_rank_deficiency_names_column():
    rng = np.random.default_rng(3)
    x = rng.normal(size=30)
    M = np.column_stack([np.ones(30), x, 2 * x])
    with pytest.raises(RankDeficientError) as exc:
        ols(M, rng.normal(size=30), ["(Intercept)", "x", "x2"])
    assert exc.value.column in ("x", "x2")
    assert exc.value.column in str(exc.value)


def test_too_few_rows():
    with pytest.raises(ValidationError):
        ols(np.ones((2, 2)), np.ones(2), ["a", "b"])


@pytest.mark.parametrize("df, ref", T_TABLE.items())
def test_t_quantiles(df, ref):
    assert abs(t_quantile(0.975, df) - ref) <= 1e-6


def test_t_quantiles_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 30
    for df in (1, 5, 10, 30, 100):
        # invert the regularized incomplete beta form of the t cdf
        def cdf(t, df=df):
            x = df / (df + t * t)
            return 1 - mpmath.betainc(df / 2, 0.5, 0, x, regularized=True) / 2
        ref = mpmath.findroot(lambda t: cdf(t) - mpmath.mpf("0.975"), 2)
        assert abs(t_quantile(0.975, df) - float(ref)) <= 1e-9


def test_ols_consistency_large_n():
    from rctsynth.simulation import DGPSpec, CovariateDGP
    dgp = DGPSpec(10 ** 5, (CovariateDGP("x1", "uniform", (-5.0, 5.0)),), 0.05, 1.0, (0.2,), 0.5)
    d = dgp.generate(np.random.default_rng(4))
    res = fit(d, dgp.model())
    assert res.coef[res.index("t1")] == pytest.approx(1.0, abs=0.02)
    assert res.coef[res.index("x1")] == pytest.approx(0.2, abs=0.01)


def test_logistic_intercept_only():
    y = np.array([0, 1] * 50, dtype=float)
    res = logistic(np.ones((100, 1)), y, ["a"])
    assert res.converged
    assert abs(res.coef[0]) <= 1e-10


def test_logistic_consistency_and_gradient():
    rng = np.random.default_rng(5)
    n = 10 ** 5
    x = rng.normal(size=n)
    M = design(x)
    y = (rng.random(n) < 1 / (1 + np.exp(-(-1 + 2 * x)))).astype(float)
    trace = []
    res = logistic(M, y, ["a", "b"], trace=trace)
    assert res.converged and not res.separated
    assert res.coef == pytest.approx([-1, 2], abs=0.05)
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))


def test_logistic_gradient_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.normal(size=(500, 2))
        M = np.column_stack([np.ones(500), x])
        y = (rng.random(500) < 1 / (1 + np.exp(-(M @ [0.2, 1.0, -0.5])))).astype(float)
        res = logistic(M, y, ["a", "b", "c"])
        h = 1e-5
        fd = [(logistic_loglik(M, y, res.coef + h * e) - logistic_loglik(M, y, res.coef - h * e))
              / (2 * h) for e in np.eye(3)]
        assert np.max(np.abs(logistic_score(M, y, res.coef) - fd)) <= 1e-6


def test_logistic_separation_flagged():
    x = np.arange(20, dtype=float)
    y = (x >= 10).astype(float)
    res = logistic(design(x), y, ["a", "b"])
    assert res.separated and not res.converged


def test_logistic_rejects_bad_response():
    with pytest.raises(ValidationError):
        logistic(np.ones((4, 1)), np.array([0, 1, 2, 1.0]), ["a"])
    with pytest.raises(ValidationError):
        logistic(np.ones((4, 1)), np.ones(4), ["a"])


def test_impute_noiseless_and_moments():
    M = design(np.linspace(0, 1, 10))
    res = ols(M, 1 + 2 * np.linspace(0, 1, 10), ["a", "b"])
    exact = impute_response(M, res, np.random.default_rng(0))
    assert np.allclose(exact, M @ res.coef, atol=1e-12)

    from dataclasses import replace
    zero = replace(res, coef=np.zeros(1), sigma2=1.0, names=("a",))
    y = impute_response(np.ones((10 ** 5, 1)), zero, np.random.default_rng(1))
    assert abs(y.mean()) <= 0.01 and abs(y.var() - 1) <= 0.02
    z = impute_response(np.ones((10 ** 5, 1)), zero, np.random.default_rng(2), "logistic")
    assert abs(z.mean() - 0.5) <= 0.01


def test_model_spec_design_matrix():
    s = parse_schema({"columns": [
        {"name": "y", "role": "response", "kind": "continuous"},
        {"name": "t1", "role": "treatment"},
        {"name": "blk", "role": "block", "kind": "discrete", "levels": ["3", "5", "9"]},
        {"name": "x1", "role": "covariate", "kind": "continuous", "bounds": [0, 1]}]})
    d = Dataset.from_arrays(s, {"y": [0.0, 1.0, 2.0, 3.0], "t1": [0, 1, 0, 1],
                                "blk": [0, 1, 2, 0], "x1": [0.1, 0.2, 0.3, 0.4]})
    m = ModelSpec.from_schema(s)
    assert m.regressor_names(d) == [INTERCEPT, "t1", "blk", "x1"]
    assert m.design_matrix(d)[:, 2].tolist() == [3.0, 5.0, 9.0, 3.0]
    dummies = ModelSpec.from_dict({**m.to_dict(), "block_encoding": "dummies"})
    assert dummies.design_matrix(d).shape == (4, 5)
    assert ModelSpec.from_dict(m.to_dict()) == m


@pytest.mark.parametrize("alias, family", [("gaussian-linear", "gaussian"), ("OLS", "gaussian"),
                                           ("binomial-logistic", "logistic"),
                                           ("logit", "logistic")])
def test_family_aliases(alias, family):
    assert normalize_family(alias) == family
