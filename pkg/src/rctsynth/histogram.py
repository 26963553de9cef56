"""Perturbed multivariate histograms over a mixed continuous/discrete grid.

The grid can have far more cells than rows, so nothing here allocates per
cell. Occupied cells are stored sparsely. Empty cells that receive positive
Laplace noise are handled in aggregate: the number of them is a single
binomial draw, their masses are exponential, and they get concrete cell
indices only when sampling selects them. The resulting distribution over
synthetic cells is the same as perturbing every one of the ``q`` cells.

When the number of positive empty cells is too large to hold in memory, their
masses are kept as one Gamma-distributed total and draws among them follow the
Dirichlet(1, ..., 1) predictive rule (a Polya urn), which is again exact.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .data import Dataset, Schema
from .errors import GridTooLargeError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_MAX_CELLS = 2 ** 48
DEFAULT_MATERIALIZE_LIMIT = 2 ** 22
_ENUMERATE_BELOW = 4096


def bins_per_dimension(n: int, zeta: float | Fraction, scale: float = 1.0) -> int:
    """``ceil(scale * n**zeta)``, robust to float noise at exact integers."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0 < zeta <= 1:
        raise ValidationError(f"zeta must lie in (0, 1], got {zeta}")
    raw = scale * float(n) ** float(zeta)
    nearest = round(raw)
    if abs(raw - nearest) <= 1e-9 * max(1.0, raw):
        return max(1, int(nearest))
    return max(1, math.ceil(raw))


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str
    bins: int
    lower: float = 0.0
    upper: float = 0.0
    n_levels: int = 0

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.bins

    @property
    def collapsed(self) -> bool:
        return self.kind == "discrete" and self.n_levels > self.bins

    def edges(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.bins + 1)


@dataclass(frozen=True)
class BinGrid:
    dims: tuple[Dimension, ...]
    zeta: float
    q: int
    strides: tuple[int, ...]

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.bins for d in self.dims)

    def cell_index(self, digits: np.ndarray) -> np.ndarray:
        """Mixed-radix digits (rows x dims) to flat cell indices."""
        digits = np.asarray(digits, dtype=np.int64).reshape(-1, len(self.dims))
        return digits @ np.asarray(self.strides, dtype=np.int64)

    def digits(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 1)
        strides = np.asarray(self.strides, dtype=np.int64)
        radix = np.asarray(self.shape, dtype=np.int64)
        return (cells // strides) % radix


def build_grid(schema: Schema, n: int, zeta: float | Fraction, *,
               columns: Sequence[str] | None = None, scale: float = 1.0,
               max_cells: int = DEFAULT_MAX_CELLS) -> BinGrid:
    """Grid over the covariates of ``schema``.

    Continuous dimensions get ``ceil(scale * n**zeta)`` equal-width bins over
    their declared bounds. Discrete dimensions get one bin per level, except
    that a variable with more levels than that bin count keeps its first
    ``bins - 1`` levels and merges the rest into a final shared bin.
    """
    names = list(columns) if columns is not None else schema.covariates
    width = bins_per_dimension(n, zeta, scale)
    dims = []
    for name in names:
        spec = schema.column(name)
        if spec.is_continuous:
            if not spec.has_bounds:
                raise ValidationError("continuous covariate has no bounds to bin over",
                                      column=name)
            dims.append(Dimension(name, "continuous", width, spec.lower, spec.upper))
        else:
            k = len(spec.levels)
            dims.append(Dimension(name, "discrete", min(k, width), n_levels=k))
    q = 1
    for d in dims:
        q *= d.bins
    if q > max_cells or q > np.iinfo(np.int64).max:
        raise GridTooLargeError(
            f"histogram would have {q} cells, above the ceiling of {max_cells}; "
            f"lower zeta (e.g. 1/3 instead of 2/3) or drop covariates")
    strides = []
    acc = 1
    for d in reversed(dims):
        strides.append(acc)
        acc *= d.bins
    return BinGrid(tuple(dims), float(zeta), q, tuple(reversed(strides)))


@dataclass(frozen=True)
class SparseCounts:
    cells: np.ndarray
    counts: np.ndarray
    n: int
    clamped: int = 0

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.cells.tolist(), self.counts.tolist()))


def bin_values(values: Mapping[str, np.ndarray], grid: BinGrid) -> tuple[np.ndarray, int]:
    """Flat cell index for each row plus the number of clamped continuous values."""
    n = len(next(iter(values.values()))) if grid.dims else 0
    cells = np.zeros(n, dtype=np.int64)
    clamped = 0
    for dim, stride in zip(grid.dims, grid.strides):
        v = values[dim.name]
        if dim.kind == "continuous":
            v = np.asarray(v, dtype=float)
            raw = np.floor((v - dim.lower) / dim.width)
            outside = (v < dim.lower) | (v > dim.upper)
            clamped += int(outside.sum())
            digit = np.clip(raw, 0, dim.bins - 1).astype(np.int64)
        else:
            digit = np.minimum(np.asarray(v, dtype=np.int64), dim.bins - 1)
        cells += digit * stride
    return cells, clamped


def count_cells(data: Dataset | Mapping[str, np.ndarray], grid: BinGrid) -> SparseCounts:
    """Histogram counts for the grid's columns, stored sparsely."""
    values = data.columns if isinstance(data, Dataset) else data
    cells, clamped = bin_values(values, grid)
    if clamped:
        log.warning("%d value(s) fell outside the grid support and were clamped", clamped)
    uniq, counts = np.unique(cells, return_counts=True)
    return SparseCounts(uniq, counts.astype(np.int64), int(cells.shape[0]), clamped)


@dataclass(eq=False)
class PerturbedHistogram:
    """A sanitized histogram, ready to be sampled.

    ``cells``/``masses`` hold occupied cells whose noisy count stayed positive.
    ``empty_masses`` hold positive noisy masses of previously empty cells; their
    cell indices are assigned on first use. ``bulk_mass`` and ``bulk_count``
    stand in for ``empty_masses`` when there are too many to store.
    """

    grid: BinGrid
    epsilon: float
    cells: np.ndarray
    masses: np.ndarray
    occupied: np.ndarray
    empty_masses: np.ndarray
    bulk_mass: float = 0.0
    bulk_count: int = 0
    degenerate: bool = False
    noise_draws: dict[str, int] = field(default_factory=dict)
    _assigned: dict[int, int] = field(default_factory=dict, repr=False)
    _taken: set[int] = field(default_factory=set, repr=False)
    _urn_cells: list[int] = field(default_factory=list, repr=False)
    _urn_counts: list[int] = field(default_factory=list, repr=False)

    @property
    def q(self) -> int:
        return self.grid.q

    @property
    def normalizer(self) -> float:
        return float(self.masses.sum() + self.empty_masses.sum() + self.bulk_mass)

    @property
    def n_empty_positive(self) -> int:
        return int(self.empty_masses.shape[0]) + self.bulk_count

    def relative_frequencies(self) -> dict[str, Any]:
        """Normalized masses: occupied cells, empty-positive entries, bulk share."""
        if self.degenerate:
            return {"cells": {}, "empty": np.zeros(0), "bulk": 0.0, "uniform": True}
        total = self.normalizer
        return {
            "cells": dict(zip(self.cells.tolist(), (self.masses / total).tolist())),
            "empty": self.empty_masses / total,
            "bulk": self.bulk_mass / total,
            "uniform": False,
        }

    def to_json(self) -> str:
        """Diagnostic dump; contains raw noisy masses, never part of a release."""
        doc = {
            "q": self.q,
            "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
            "degenerate": self.degenerate,
            "entries": [{"cell": int(c), "mass": float(m)}
                        for c, m in zip(self.cells.tolist(), self.masses.tolist())],
            "empty_positive": [{"cell": self._assigned.get(j), "mass": float(m)}
                               for j, m in enumerate(self.empty_masses.tolist())],
            "bulk": {"count": self.bulk_count, "mass": self.bulk_mass},
            "noise_draws": self.noise_draws,
        }
        return json.dumps(doc, indent=2)

    def _fresh_cells(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` distinct cells, uniform among cells neither occupied nor taken."""
        if count == 0:
            return np.zeros(0, dtype=np.int64)
        q = self.q
        if q <= _ENUMERATE_BELOW:
            mask = np.ones(q, dtype=bool)
            mask[self.occupied] = False
            if self._taken:
                mask[np.fromiter(self._taken, dtype=np.int64)] = False
            pool = np.flatnonzero(mask)
            chosen = rng.choice(pool, size=count, replace=False)
        else:
            available = q - self.occupied.shape[0] - len(self._taken)
            picked: list[int] = []
            seen: set[int] = set()
            while len(picked) < count:
                need = count - len(picked)
                draw = rng.integers(0, q, size=int(need * q / available) + 16)
                pos = np.searchsorted(self.occupied, draw)
                pos = np.minimum(pos, max(self.occupied.shape[0] - 1, 0))
                hit = (self.occupied[pos] == draw) if self.occupied.size else \
                    np.zeros(draw.shape, dtype=bool)
                for c in draw[~hit].tolist():
                    if c in self._taken or c in seen:
                        continue
                    seen.add(c)
                    picked.append(c)
                    if len(picked) == count:
                        break
            chosen = np.asarray(picked, dtype=np.int64)
        self._taken.update(chosen.tolist())
        return chosen

    def _urn_draws(self, count: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        for i in range(count):
            drawn = sum(self._urn_counts)
            u = rng.random() * (self.bulk_count + drawn)
            acc = 0.0
            chosen = -1
            for j, c in enumerate(self._urn_counts):
                acc += 1 + c
                if u < acc:
                    chosen = j
                    break
            if chosen < 0:
                cell = int(self._fresh_cells(1, rng)[0])
                self._urn_cells.append(cell)
                self._urn_counts.append(1)
                out[i] = cell
            else:
                self._urn_counts[chosen] += 1
                out[i] = self._urn_cells[chosen]
        return out

    def sample_cells(self, n_out: int, rng: np.random.Generator) -> np.ndarray:
        """``n_out`` i.i.d. cell indices with probabilities proportional to mass."""
        if self.degenerate:
            return rng.integers(0, self.q, size=n_out, dtype=np.int64)
        n_occ = self.masses.shape[0]
        n_emp = self.empty_masses.shape[0]
        weights = np.concatenate([self.masses, self.empty_masses,
                                  [self.bulk_mass] if self.bulk_count else []])
        cum = np.cumsum(weights)
        entry = np.searchsorted(cum, rng.random(n_out) * cum[-1], side="right")
        np.minimum(entry, weights.shape[0] - 1, out=entry)
        out = np.empty(n_out, dtype=np.int64)
        occ = entry < n_occ
        out[occ] = self.cells[entry[occ]]
        emp = (~occ) & (entry < n_occ + n_emp)
        if emp.any():
            wanted = entry[emp] - n_occ
            new = [j for j in np.unique(wanted).tolist() if j not in self._assigned]
            for j, c in zip(new, self._fresh_cells(len(new), rng).tolist()):
                self._assigned[j] = c
            out[emp] = [self._assigned[j] for j in wanted.tolist()]
        bulk = entry >= n_occ + n_emp
        if bulk.any():
            out[bulk] = self._urn_draws(int(bulk.sum()), rng)
        return out


def perturb(counts: SparseCounts, grid: BinGrid, epsilon: float,
            rng: np.random.Generator, *,
            materialize_limit: int = DEFAULT_MATERIALIZE_LIMIT,
            laplace_noise: np.ndarray | None = None) -> PerturbedHistogram:
    """Add Laplace(0, 2/epsilon) noise to every cell count, clamp at zero.

    ``epsilon = inf`` leaves the counts untouched. ``laplace_noise`` overrides
    the noise on occupied cells (test hook).
    """
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive or inf, got {epsilon}")
    occupied = counts.cells.astype(np.int64)
    if math.isinf(epsilon):
        return PerturbedHistogram(grid, math.inf, occupied, counts.counts.astype(float),
                                  occupied, np.zeros(0), noise_draws={})
    scale = 2.0 / epsilon
    if laplace_noise is None:
        noise = rng.laplace(0.0, scale, size=occupied.shape[0])
    else:
        noise = np.asarray(laplace_noise, dtype=float)
        if noise.shape != occupied.shape:
            raise ValueError("laplace_noise must match the number of occupied cells")
    noisy = counts.counts + noise
    keep = noisy > 0
    n_empty = grid.q - occupied.shape[0]
    k = int(rng.binomial(n_empty, 0.5))
    draws = {"laplace": int(occupied.shape[0]), "binomial": 1}
    bulk_mass, bulk_count = 0.0, 0
    if k <= materialize_limit:
        empty_masses = rng.exponential(scale, size=k)
        draws["exponential"] = k
    else:
        empty_masses = np.zeros(0)
        bulk_mass = float(rng.gamma(k, scale))
        bulk_count = k
        draws["gamma"] = 1
    degenerate = not keep.any() and k == 0
    if degenerate:
        log.warning("all perturbed counts were clamped to zero; sampling uniformly over cells")
    return PerturbedHistogram(grid, float(epsilon), occupied[keep], noisy[keep], occupied,
                              empty_masses, bulk_mass, bulk_count, degenerate, draws)


def decode_cells(cells: np.ndarray, grid: BinGrid,
                 rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Cell indices to column values, uniform within each continuous bin.

    A collapsed discrete bin resolves uniformly among its merged levels.
    """
    digits = grid.digits(cells)
    out: dict[str, np.ndarray] = {}
    for j, dim in enumerate(grid.dims):
        d = digits[:, j]
        if dim.kind == "continuous":
            values = dim.lower + (d + rng.random(d.shape[0])) * dim.width
            out[dim.name] = np.minimum(values, dim.upper)
        else:
            level = d.copy()
            if dim.collapsed:
                other = d == dim.bins - 1
                spread = dim.n_levels - dim.bins + 1
                level[other] += rng.integers(0, spread, size=int(other.sum()))
            out[dim.name] = level
    return out


def sample_covariates(hist: PerturbedHistogram, grid: BinGrid, n_out: int,
                      rng: np.random.Generator) -> dict[str, np.ndarray]:
    return decode_cells(hist.sample_cells(n_out, rng), grid, rng)
