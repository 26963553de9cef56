import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rctsynth.data import Dataset, parse_schema
from rctsynth.errors import ValidationError
from rctsynth.metrics import (CIRecord, StatisticSpec, aggregate, ci_overlap_indicator,
                              ci_overlap_measure, compare_fits, estimate_coverage,
                              sensitive_stat_mse, squared_error)
from rctsynth.regression import ols


def ci(lo, hi, est=None):
    return CIRecord("b", (lo + hi) / 2 if est is None else est, lo, hi)


@pytest.mark.parametrize("a, b, expected", [((0, 2), (1, 3), 1), ((0, 1), (2, 3), 0),
                                            ((0, 1), (1, 2), 1)])
def test_overlap_indicator(a, b, expected):
    assert ci_overlap_indicator(ci(*a), ci(*b)) == expected


@pytest.mark.parametrize("est, expected", [(0.5, 1), (1.5, 0), (1.0, 1), (0.0, 1)])
def test_coverage_closed(est, expected):
    assert estimate_coverage(est, ci(0, 1)) == expected


def test_overlap_measure_values():
    assert ci_overlap_measure(ci(0, 2), ci(1, 3)) == 0.5
    assert ci_overlap_measure(ci(0, 1), ci(0, 1)) == 1.0
    assert ci_overlap_measure(ci(0, 1), ci(2, 3)) == 0.0
    # nested: inner fully covered, outer a quarter
    assert ci_overlap_measure(ci(0, 4), ci(1, 2)) == pytest.approx(0.5 * (1 / 4 + 1))


def test_overlap_measure_zero_width():
    with pytest.raises(ValidationError):
        ci_overlap_measure(ci(1, 1), ci(0, 2))


def test_bad_interval():
    with pytest.raises(ValidationError):
        CIRecord("b", 0, 2, 1)


def test_squared_error():
    assert squared_error(1.0, 1.0) == 0
    assert squared_error(1.0, 0.9) == pytest.approx(0.01, rel=1e-12)


finite = st.floats(-1e3, 1e3, allow_nan=False)
width = st.floats(1e-3, 1e3, allow_nan=False)


@given(finite, width, finite, width)
def test_symmetry_and_range(c1, w1, c2, w2):
    a, b = ci(c1 - w1 / 2, c1 + w1 / 2), ci(c2 - w2 / 2, c2 + w2 / 2)
    m = ci_overlap_measure(a, b)
    assert m == ci_overlap_measure(b, a)
    assert ci_overlap_indicator(a, b) == ci_overlap_indicator(b, a)
    assert 0.0 <= m <= 1.0 + 1e-12


@given(finite, width, finite, width, st.floats(1.0, 5.0))
def test_widening_never_decreases(c1, w1, c2, w2, k):
    a, b = ci(c1 - w1 / 2, c1 + w1 / 2), ci(c2 - w2 / 2, c2 + w2 / 2)
    a2, b2 = ci(c1 - k * w1 / 2, c1 + k * w1 / 2), ci(c2 - k * w2 / 2, c2 + k * w2 / 2)
    assert ci_overlap_measure(a2, b2) >= ci_overlap_measure(a, b) - 1e-9


@given(st.floats(-10, 10), width, st.floats(-10, 10), width, st.floats(0.1, 10), finite)
def test_affine_invariance(c1, w1, c2, w2, scale, shift):
    a, b = ci(c1 - w1 / 2, c1 + w1 / 2, c1), ci(c2 - w2 / 2, c2 + w2 / 2, c2)
    f = lambda r: CIRecord(r.name, scale * r.estimate + shift, scale * r.lower + shift,
                           scale * r.upper + shift)
    assert ci_overlap_measure(f(a), f(b)) == pytest.approx(ci_overlap_measure(a, b), abs=1e-6)
    assert squared_error(f(a).estimate, f(b).estimate) == pytest.approx(
        scale ** 2 * squared_error(a.estimate, b.estimate), rel=1e-6, abs=1e-9)


def frame(x):
    s = parse_schema({"columns": [
        {"name": "y", "role": "response", "kind": "continuous"},
        {"name": "x1", "role": "covariate", "kind": "continuous", "bounds": [-100, 100]}]})
    x = np.asarray(x, dtype=float)
    return Dataset.from_arrays(s, {"y": np.zeros_like(x), "x1": x})


def test_sensitive_stat_mse():
    stat = StatisticSpec.parse("variance:x1")
    private = frame([-1, 1, -1, 1, 0, 0])  # var 0.8
    a, b = frame(np.array([-1, 1, -1, 1, 0, 0]) * np.sqrt(2)), frame([0, 0, 0, 0, 0, 0])
    base = stat(private)
    expected = ((base - stat(a)) ** 2 + (base - stat(b)) ** 2) / 2
    assert sensitive_stat_mse(stat, private, [a, b]) == pytest.approx(expected)
    assert sensitive_stat_mse("variance:x1", private, [private]) == 0.0


def test_sensitive_stat_vars_two():
    rng = np.random.default_rng(0)
    z = rng.normal(size=1000)
    z = (z - z.mean()) / z.std(ddof=1)
    p, s1, s3 = frame(z * np.sqrt(2)), frame(z), frame(z * np.sqrt(3))
    assert sensitive_stat_mse("variance:x1", p, [s1, s3]) == pytest.approx(1.0)


def test_statistic_spec_errors():
    with pytest.raises(ValidationError):
        StatisticSpec.parse("variance")
    with pytest.raises(ValidationError):
        StatisticSpec.parse("kurtosis:x1")
    with pytest.raises(ValidationError, match="not a covariate"):
        StatisticSpec.parse("variance:y")(frame([1, 2]))
    assert StatisticSpec.parse("variance:x1").label == "MSE of Variance of x1"


def fits(seed):
    rng = np.random.default_rng(seed)
    M = np.column_stack([np.ones(40), rng.normal(size=40)])
    return ols(M, M @ [1, 2] + rng.normal(size=40), ["(Intercept)", "x"])


def test_compare_and_aggregate():
    a, b = fits(0), fits(1)
    pair = compare_fits(a, b)
    assert pair.names == ("(Intercept)", "x")
    single = aggregate([pair])
    row = single.row("x")
    assert row.metric4 == pytest.approx((a.coef[1] - b.coef[1]) ** 2)
    self_report = aggregate([compare_fits(a, a)] * 3)
    for r in self_report.rows:
        assert (r.metric1, r.metric2, r.metric3, r.metric4) == (1.0, 1.0, 1.0, 0.0)


def test_aggregate_proportion():
    a = fits(0)
    hit = compare_fits(a, a)
    shifted = replace(a, coef=a.coef + 100, ci_lower=a.ci_lower + 100, ci_upper=a.ci_upper + 100)
    miss = compare_fits(a, shifted)
    rep = aggregate([hit] * 1893 + [miss] * 107)
    assert rep.row("x").metric2 == pytest.approx(0.9465)
    assert rep.row("x").metric1 == pytest.approx(0.9465)


def test_report_serialization():
    rep = aggregate([compare_fits(fits(0), fits(1))], metric5=0.25, statistic="variance:x")
    doc = json.loads(rep.to_json())
    assert doc["metric5"] == {"statistic": "variance:x", "mse": 0.25}
    lines = rep.to_csv({"x": "x_1"}).splitlines()
    assert lines[0] == "Variable names,Metric 1,Metric 2,Metric 3,Metric 4"
    assert lines[2].startswith("x_1,")


def test_mismatched_fits():
    a = fits(0)
    rng = np.random.default_rng(2)
    M = np.column_stack([np.ones(40), rng.normal(size=40)])
    other = ols(M, rng.normal(size=40), ["(Intercept)", "z"])
    with pytest.raises(ValidationError):
        compare_fits(a, other)
