"""Treatment re-randomization for synthetic units.

Arms are the treatment dummy columns; the control arm is the all-zero row and
is called ``"control"`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import ValidationError

CONTROL = "control"
VARIANTS = ("simple", "complete", "stratified")


@dataclass(frozen=True)
class Stratum:
    key: tuple[int, ...]            # block level index per block column
    counts: Mapping[str, int]       # arm name (incl. control) -> units

    @property
    def size(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class DesignSpec:
    variant: str
    arms: tuple[str, ...]
    probabilities: Mapping[str, float] | None = None
    counts: Mapping[str, int] | None = None
    block_columns: tuple[str, ...] = ()
    strata: tuple[Stratum, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown design variant {self.variant!r}")
        labels = set(self.arms) | {CONTROL}
        if self.variant == "simple":
            probs = self.probabilities or {}
            if set(probs) - labels:
                raise ValidationError(f"unknown arms in probabilities: {set(probs) - labels}")
            if any(v < 0 for v in probs.values()) or abs(sum(probs.values()) - 1) > 1e-9:
                raise ValidationError("arm probabilities must be nonnegative and sum to 1")
        elif self.variant == "complete":
            counts = self.counts or {}
            if set(counts) - labels or any(v < 0 for v in counts.values()):
                raise ValidationError("complete design needs nonnegative counts per arm")
        else:
            if not self.block_columns:
                raise ValidationError("stratified design requires at least one block column")
            for s in self.strata:
                if s.size == 0:
                    raise ValidationError(f"empty block combination {s.key}")
                if len(s.key) != len(self.block_columns):
                    raise ValidationError("stratum key does not match block columns")

    @property
    def n(self) -> int | None:
        if self.variant == "complete":
            return sum(self.counts.values())
        if self.variant == "stratified":
            return sum(s.size for s in self.strata)
        return None

    @property
    def m(self) -> int:
        return len(self.strata)

    def to_dict(self) -> dict:
        out: dict = {"variant": self.variant, "arms": list(self.arms)}
        if self.probabilities is not None:
            out["probabilities"] = dict(self.probabilities)
        if self.counts is not None:
            out["counts"] = dict(self.counts)
        if self.block_columns:
            out["block_columns"] = list(self.block_columns)
            out["strata"] = len(self.strata)
        return out


@dataclass(frozen=True)
class AssignmentMatrix:
    arms: tuple[str, ...]
    dummies: np.ndarray                     # n x t, int64
    block_columns: tuple[str, ...] = ()
    blocks: np.ndarray | None = None        # n x b level indices
    arm_of_row: np.ndarray = field(default=None, repr=False)  # index into arms, -1 control

    @property
    def n(self) -> int:
        return int(self.dummies.shape[0])

    def columns(self) -> dict[str, np.ndarray]:
        out = {a: self.dummies[:, k] for k, a in enumerate(self.arms)}
        for j, b in enumerate(self.block_columns):
            out[b] = self.blocks[:, j]
        return out


def _arm_codes(dataset: Dataset, arms: Sequence[str]) -> np.ndarray:
    code = np.full(dataset.n, -1, dtype=np.int64)
    for k, a in enumerate(arms):
        code[dataset[a] == 1] = k
    return code


def _count_map(codes: np.ndarray, arms: Sequence[str]) -> dict[str, int]:
    out = {a: int((codes == k).sum()) for k, a in enumerate(arms)}
    out[CONTROL] = int((codes == -1).sum())
    return out


def infer_design(dataset: Dataset, variant: str = "complete") -> DesignSpec:
    """Parameterize a design from observed arm (and block) frequencies."""
    schema = dataset.schema
    arms = tuple(schema.treatment_arms)
    if not arms:
        raise ValidationError("dataset has no treatment columns")
    codes = _arm_codes(dataset, arms)
    if variant == "simple":
        counts = _count_map(codes, arms)
        n = dataset.n
        probs = {a: c / n for a, c in counts.items() if c > 0}
        return DesignSpec("simple", arms, probabilities=probs)
    if variant == "complete":
        return DesignSpec("complete", arms, counts=_count_map(codes, arms))
    if variant != "stratified":
        raise ValidationError(f"unknown design variant {variant!r}")
    blocks = tuple(schema.block_columns)
    if not blocks:
        raise ValidationError("stratified design requested but schema has no block columns")
    keys = np.stack([dataset[b] for b in blocks], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    strata = tuple(
        Stratum(tuple(int(v) for v in uniq[j]), _count_map(codes[inverse == j], arms))
        for j in range(uniq.shape[0]))
    return DesignSpec("stratified", arms, block_columns=blocks, strata=strata)


def _labels(design: DesignSpec) -> list[str]:
    return list(design.arms) + [CONTROL]


def _codes_from_counts(counts: Mapping[str, int], design: DesignSpec) -> np.ndarray:
    codes = []
    for k, a in enumerate(design.arms):
        codes.extend([k] * counts.get(a, 0))
    codes.extend([-1] * counts.get(CONTROL, 0))
    return np.asarray(codes, dtype=np.int64)


def assign(design: DesignSpec, n_out: int, rng: np.random.Generator) -> AssignmentMatrix:
    """Draw fresh arm assignments (and block memberships) for ``n_out`` units."""
    t = len(design.arms)
    blocks = None
    if design.variant == "simple":
        labels = _labels(design)
        probs = np.array([design.probabilities.get(a, 0.0) for a in labels])
        idx = rng.choice(len(labels), size=n_out, p=probs / probs.sum())
        codes = np.where(idx == t, -1, idx).astype(np.int64)
    elif design.variant == "complete":
        if n_out != design.n:
            raise ValidationError(
                f"complete design fixes n = {design.n} units, asked for {n_out}")
        codes = rng.permutation(_codes_from_counts(design.counts, design))
    else:
        if n_out != design.n:
            raise ValidationError(
                f"stratified design fixes n = {design.n} units, asked for {n_out}")
        parts, keys = [], []
        for s in design.strata:
            parts.append(rng.permutation(_codes_from_counts(s.counts, design)))
            keys.append(np.tile(np.asarray(s.key, dtype=np.int64), (s.size, 1)))
        codes = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        blocks = (np.concatenate(keys) if keys
                  else np.zeros((0, len(design.block_columns)), dtype=np.int64))
    dummies = np.zeros((n_out, t), dtype=np.int64)
    treated = codes >= 0
    dummies[np.flatnonzero(treated), codes[treated]] = 1
    return AssignmentMatrix(design.arms, dummies, design.block_columns, blocks, codes)


def arm_counts_by_stratum(dataset: Dataset) -> dict[tuple[int, ...], dict[str, int]]:
    """Per block combination, units per arm. Used to check stratified output."""
    spec = infer_design(dataset, "stratified")
    return {s.key: dict(s.counts) for s in spec.strata}
