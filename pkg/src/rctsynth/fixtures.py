"""A synthetic stand-in for a stratified 2x2 factorial field experiment.

The frame mimics the layout of a youth-violence RCT: one outcome, three arm
dummies (cash only, therapy only, both) with an implicit control, two
stratification columns, two continuous baseline covariates and five binary
baseline indicators. Numbers are invented. A few rows carry planted
"fingerprint" values so tests can check that nothing private leaks into a
release.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, parse_schema
from .regression import ModelSpec

N_ROWS = 999
THERAPY_BLOCKS = 11
CASH_BLOCKS = 5
RESPONSE = "fam_asb_lt"
ARMS = ("tpassonly", "cashassonly", "tpcashass")
BLOCKS = ("tp_strata_alt", "cg_strata")
CONTINUOUS = {"age_b": (14.0, 40.0), "asbhostil_b": (-3.0, 4.0)}
BINARY = ("drugssellever_b", "drinkboozeself_b", "druggrassself_b", "harddrugsever_b",
          "steals_b")
FINGERPRINTS = {"age_b": (27.318470293, 33.905126781, 19.442087615),
                "asbhostil_b": (1.873620459, -2.260951384, 0.517339026)}
FINGERPRINT_ROWS = (17, 404, 868)


def liberia_schema_document() -> dict:
    cols = [{"name": RESPONSE, "role": "response", "kind": "continuous"}]
    cols += [{"name": a, "role": "treatment"} for a in ARMS]
    cols += [{"name": BLOCKS[0], "role": "block", "kind": "discrete",
              "levels": [str(i) for i in range(1, THERAPY_BLOCKS + 1)]},
             {"name": BLOCKS[1], "role": "block", "kind": "discrete",
              "levels": [str(i) for i in range(1, CASH_BLOCKS + 1)]}]
    cols += [{"name": c, "role": "covariate", "kind": "continuous", "bounds": list(b)}
             for c, b in CONTINUOUS.items()]
    cols += [{"name": c, "role": "covariate", "kind": "discrete", "levels": ["0", "1"]}
             for c in BINARY]
    return {"columns": cols}


def liberia_model(family: str = "gaussian") -> ModelSpec:
    return ModelSpec(RESPONSE, ARMS, BLOCKS, tuple(CONTINUOUS) + BINARY, family)


@dataclass(frozen=True)
class LiberiaShapedDGP:
    n: int = N_ROWS
    plant_fingerprints: bool = True

    @property
    def schema(self):
        return parse_schema(liberia_schema_document())

    def model(self, family: str = "gaussian") -> ModelSpec:
        return liberia_model(family)

    def design_variant(self) -> str:
        return "stratified"

    def describe(self) -> dict:
        return {"kind": "liberia-shaped", "n": self.n, "arms": list(ARMS),
                "blocks": {BLOCKS[0]: THERAPY_BLOCKS, BLOCKS[1]: CASH_BLOCKS},
                "covariates": list(CONTINUOUS) + list(BINARY)}

    def generate(self, rng: np.random.Generator) -> Dataset:
        n = self.n
        tp_block = rng.integers(0, THERAPY_BLOCKS, size=n)
        cg_block = rng.integers(0, CASH_BLOCKS, size=n)
        therapy = rng.random(n) < 0.5
        cash = rng.random(n) < 0.5
        lo, hi = CONTINUOUS["age_b"]
        age = np.clip(rng.normal(25.0, 4.5, size=n), lo, hi)
        lo, hi = CONTINUOUS["asbhostil_b"]
        asb = np.clip(rng.normal(0.0, 1.0, size=n), lo, hi)
        binary = {c: (rng.random(n) < p).astype(np.int64)
                  for c, p in zip(BINARY, (0.35, 0.6, 0.45, 0.15, 0.3))}
        if self.plant_fingerprints and n > max(FINGERPRINT_ROWS):
            for row, a, h in zip(FINGERPRINT_ROWS, FINGERPRINTS["age_b"],
                                 FINGERPRINTS["asbhostil_b"]):
                age[row] = a
                asb[row] = h
        tp_only = (therapy & ~cash).astype(np.int64)
        cash_only = (cash & ~therapy).astype(np.int64)
        both = (therapy & cash).astype(np.int64)
        y = (0.05 - 0.03 * tp_only + 0.10 * cash_only - 0.22 * both
             - 0.01 * (age - 25.0) + 0.30 * asb
             + 0.20 * binary["drugssellever_b"] + 0.05 * binary["drinkboozeself_b"]
             + 0.10 * binary["druggrassself_b"] + 0.15 * binary["harddrugsever_b"]
             + 0.12 * binary["steals_b"]
             + 0.004 * (tp_block + 1) - 0.01 * (cg_block + 1)
             + rng.normal(0.0, 0.9, size=n))
        columns = {RESPONSE: y, ARMS[0]: tp_only, ARMS[1]: cash_only, ARMS[2]: both,
                   BLOCKS[0]: tp_block, BLOCKS[1]: cg_block, "age_b": age,
                   "asbhostil_b": asb, **binary}
        return Dataset.from_arrays(self.schema, columns, dp_mode=True)


def liberia_fixture(seed: int = 20171) -> Dataset:
    return LiberiaShapedDGP().generate(np.random.default_rng(seed))
