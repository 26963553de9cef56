import json
import math
from dataclasses import replace

import numpy as np
import pytest

from rctsynth.data import Dataset, dataset_to_csv_text, parse_schema
from rctsynth.design import AssignmentMatrix, arm_counts_by_stratum
from rctsynth.errors import ValidationError
from rctsynth.fixtures import FINGERPRINTS, liberia_fixture, liberia_model
from rctsynth.regression import ModelSpec, fit
from rctsynth.simulation import CovariateDGP, DGPSpec
from rctsynth.synthesis import (OBSERVED_SUPPORT_WARNING, SynthesisConfig, parse_epsilon,
                                parse_zeta, synthesize, synthesize_responses,
                                write_release_bundle)

SIM1 = DGPSpec(100, (CovariateDGP("x1", "uniform", (-5.0, 5.0)),), 0.05, 1.0, (0.2,), 0.5)


def sim1_frame(seed=0):
    return SIM1.generate(np.random.default_rng(seed))


def test_basic_shape_and_sanity():
    d = sim1_frame()
    out = synthesize(d, SIM1.model(), SynthesisConfig(1.0, "2/3", seed=7))
    assert out.synthetic.n == 100
    assert out.synthetic.schema.names == ["y", "t1", "x1"]
    tau = out.released_fit.coef[out.released_fit.index("t1")]
    assert abs(tau - 1.0) <= 0.45
    assert out.grid.q == 22


def test_reproducible():
    d = sim1_frame()
    cfg = SynthesisConfig(0.5, "2/3", seed=11)
    a, b = synthesize(d, SIM1.model(), cfg), synthesize(d, SIM1.model(), cfg)
    assert dataset_to_csv_text(a.synthetic) == dataset_to_csv_text(b.synthetic)
    assert json.dumps(a.release()) == json.dumps(b.release())
    c = synthesize(d, SIM1.model(), replace(cfg, seed=12))
    assert dataset_to_csv_text(c.synthetic) != dataset_to_csv_text(a.synthetic)


def test_identity_limit():
    d = sim1_frame(3)
    model = SIM1.model()
    private = fit(d, model)

    def same_covariates(hist, grid, n_out, rng):
        return {c: d[c] for c in d.schema.covariates}

    def same_treatments(design, n_out, rng):
        return AssignmentMatrix(design.arms, np.column_stack([d[a] for a in design.arms]))

    out = synthesize(d, model, SynthesisConfig(math.inf, "2/3", seed=1),
                     private_fit=replace(private, sigma2=0.0),
                     covariate_sampler=same_covariates, assigner=same_treatments)
    assert np.allclose(out.released_fit.coef, private.coef, rtol=0, atol=1e-10)


def test_non_dp_falls_back_to_observed_range():
    doc = {"columns": [{"name": "y", "role": "response", "kind": "continuous"},
                       {"name": "t1", "role": "treatment"},
                       {"name": "x1", "role": "covariate", "kind": "continuous"}]}
    s = parse_schema(doc, dp_mode=False)
    d = Dataset.from_arrays(s, {c: sim1_frame()[c] for c in s.names})
    out = synthesize(d, SIM1.model(), SynthesisConfig(math.inf, "2/3", seed=2))
    x = out.synthetic["x1"]
    assert d["x1"].min() <= x.min() and x.max() <= d["x1"].max()
    with pytest.raises(ValidationError, match="DP mode"):
        synthesize(d, SIM1.model(), SynthesisConfig(1.0, "2/3", seed=2))


def test_observed_support_is_flagged():
    out = synthesize(sim1_frame(), SIM1.model(),
                     SynthesisConfig(1.0, "2/3", seed=3, support="observed"))
    assert OBSERVED_SUPPORT_WARNING in out.warnings
    assert OBSERVED_SUPPORT_WARNING in out.release()["warnings"]


def test_n_out_override():
    d = sim1_frame()
    spec = SIM1.design()
    out = synthesize(d, SIM1.model(), SynthesisConfig(1.0, "2/3", design=spec, seed=4, n_out=250))
    assert out.synthetic.n == 250


def test_logistic_outcome():
    rng = np.random.default_rng(5)
    s = parse_schema({"columns": [
        {"name": "y", "role": "response", "kind": "discrete", "levels": ["0", "1"]},
        {"name": "t1", "role": "treatment"},
        {"name": "x1", "role": "covariate", "kind": "continuous", "bounds": [-5, 5]}]})
    x = rng.uniform(-5, 5, 400)
    t = rng.integers(0, 2, 400)
    y = (rng.random(400) < 1 / (1 + np.exp(-(-0.5 + t + 0.3 * x)))).astype(int)
    d = Dataset.from_arrays(s, {"y": y, "t1": t, "x1": x})
    model = ModelSpec("y", ("t1",), (), ("x1",), "logistic")
    out = synthesize(d, model, SynthesisConfig(1.0, "2/3", "logistic", seed=6))
    assert set(out.synthetic["y"].tolist()) <= {0, 1}
    assert out.released_fit.family == "logistic"
    assert out.release()["interval"]["reference"] == "normal"


def test_liberia_fixture_end_to_end(tmp_path):
    d = liberia_fixture()
    out = synthesize(d, liberia_model(), SynthesisConfig(1.0, "2/3", seed=8))
    assert out.design.variant == "stratified"
    assert arm_counts_by_stratum(out.synthetic) == arm_counts_by_stratum(d)
    rel = out.release()
    assert [r["name"] for r in rel["coefficients"]] == ["tpassonly", "cashassonly", "tpcashass"]
    assert set(rel["coefficients"][0]) == {"name", "estimate", "std_error", "ci_lower",
                                           "ci_upper", "p_value"}
    paths = write_release_bundle(out, tmp_path)
    text = "".join(open(p).read() for p in paths.values())
    for values in FINGERPRINTS.values():
        for v in values:
            assert f"{v:.9f}" not in text


def test_release_excludes_private_fit():
    d = sim1_frame()
    out = synthesize(d, SIM1.model(), SynthesisConfig(1.0, "2/3", seed=9))
    text = json.dumps(out.release())
    for value in out.private_fit.coef.tolist() + out.private_fit.se.tolist():
        assert repr(value) not in text
    assert "x1" not in [r["name"] for r in out.release()["coefficients"]]
    assert out.release()["privacy"]["epsilon"] == 1.0


def test_infinite_epsilon_label():
    out = synthesize(sim1_frame(), SIM1.model(), SynthesisConfig("inf", "2/3", seed=1))
    assert out.release()["privacy"]["epsilon"] == "inf"
    assert out.release()["config"]["epsilon"] == "inf"


def test_monotone_distortion():
    gaps = {e: [] for e in (0.1, 0.5, 1.0, math.inf)}
    for seed in range(100):
        d = sim1_frame(1000 + seed)
        v = np.var(d["x1"], ddof=1)
        for e in gaps:
            out = synthesize(d, SIM1.model(), SynthesisConfig(e, "2/3", design=SIM1.design(),
                                                              seed=seed, support="declared"))
            gaps[e].append(abs(np.var(out.synthetic["x1"], ddof=1) - v))
    means = [np.mean(g) for g in gaps.values()]
    assert all(a >= b for a, b in zip(means, means[1:])), means


def test_multiple_responses_get_distinct_seeds():
    d = sim1_frame()
    cfg = SynthesisConfig(1.0, "2/3", seed=21)
    a, b = synthesize_responses([d, d], [SIM1.model(), SIM1.model()], cfg)
    assert dataset_to_csv_text(a.synthetic) != dataset_to_csv_text(b.synthetic)
    again = synthesize_responses([d, d], [SIM1.model(), SIM1.model()], cfg)
    assert dataset_to_csv_text(again[1].synthetic) == dataset_to_csv_text(b.synthetic)


@pytest.mark.parametrize("text, value", [("2/3", 2 / 3), ("1/3", 1 / 3), ("0.6667", 0.6667)])
def test_parse_zeta(text, value):
    assert float(parse_zeta(text)) == pytest.approx(value)


@pytest.mark.parametrize("bad", ["0", "1.5", "x", "1/0"])
def test_parse_zeta_rejects(bad):
    with pytest.raises(ValidationError):
        parse_zeta(bad)


def test_parse_epsilon():
    assert parse_epsilon("inf") == math.inf
    assert parse_epsilon("0.5") == 0.5
    for bad in ("0", "-1", "abc"):
        with pytest.raises(ValidationError):
            parse_epsilon(bad)
