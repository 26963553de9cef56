"""Typed tabular data: column schemas, validated datasets, CSV/JSON I/O.

A :class:`Dataset` stores one numpy array per column. Continuous columns are
``float64``; discrete columns (treatment dummies, blocks, categorical
covariates) hold ``int64`` indices into the declared level list.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import IO, Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

ROLES = ("response", "treatment", "covariate", "block")
KINDS = ("continuous", "discrete")
TREATMENT_LEVELS = ("0", "1")


def _as_float(label: str) -> float | None:
    try:
        value = float(label)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    levels: tuple[str, ...] | None = None

    @property
    def is_continuous(self) -> bool:
        return self.kind == "continuous"

    @property
    def has_bounds(self) -> bool:
        return self.lower is not None and self.upper is not None

    @property
    def numeric_levels(self) -> np.ndarray:
        """Numeric value of each level as used in a design matrix.

        Levels whose labels all parse as numbers use those numbers; otherwise
        the level index is used.
        """
        if self.levels is None:
            raise TypeError(f"column '{self.name}' is continuous")
        parsed = [_as_float(lv) for lv in self.levels]
        if all(v is not None for v in parsed):
            return np.asarray(parsed, dtype=float)
        return np.arange(len(self.levels), dtype=float)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "role": self.role, "kind": self.kind}
        if self.is_continuous:
            if self.has_bounds:
                out["bounds"] = [self.lower, self.upper]
        else:
            out["levels"] = list(self.levels or ())
        return out


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        seen = set()
        for name in names:
            if name in seen:
                raise ValidationError(f"duplicate column name '{name}'", column=name)
            seen.add(name)
        responses = [c for c in self.columns if c.role == "response"]
        if len(responses) != 1:
            raise ValidationError(
                f"schema must declare exactly one response column, found {len(responses)}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def _role(self, role: str) -> list[str]:
        return [c.name for c in self.columns if c.role == role]

    @property
    def response(self) -> str:
        return self._role("response")[0]

    @property
    def treatment_arms(self) -> list[str]:
        return self._role("treatment")

    @property
    def block_columns(self) -> list[str]:
        return self._role("block")

    @property
    def covariates(self) -> list[str]:
        return self._role("covariate")

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def t(self) -> int:
        return len(self.treatment_arms)

    @property
    def b(self) -> int:
        return len(self.block_columns)

    def require_bounds(self, source: str | None = None) -> None:
        """Raise unless every continuous covariate has finite public bounds."""
        for c in self.columns:
            if c.role == "covariate" and c.is_continuous and not c.has_bounds:
                raise ValidationError(
                    "continuous covariate needs declared bounds [lower, upper] in DP mode "
                    "(finite epsilon); data-dependent ranges would leak information",
                    source=source, column=c.name)

    def with_columns(self, updates: Mapping[str, ColumnSpec]) -> "Schema":
        return Schema(tuple(updates.get(c.name, c) for c in self.columns))

    def to_dict(self) -> dict[str, Any]:
        return {"columns": [c.to_dict() for c in self.columns]}


def _parse_column(entry: Mapping[str, Any], source: str | None) -> ColumnSpec:
    if not isinstance(entry, Mapping):
        raise ValidationError("each column entry must be an object", source=source)
    name = entry.get("name")
    if not isinstance(name, str) or not name:
        raise ValidationError("column entry without a name", source=source)
    role = entry.get("role")
    if role not in ROLES:
        raise ValidationError(f"unknown role {role!r}; expected one of {ROLES}",
                              source=source, column=name)
    kind = entry.get("kind")
    if role == "treatment":
        kind = kind or "discrete"
        levels = tuple(str(v) for v in entry.get("levels", TREATMENT_LEVELS))
        if kind != "discrete" or levels != TREATMENT_LEVELS:
            raise ValidationError("treatment columns are 0/1 dummies (levels ['0', '1'])",
                                  source=source, column=name)
        return ColumnSpec(name, role, "discrete", levels=TREATMENT_LEVELS)
    if kind not in KINDS:
        raise ValidationError(f"unknown kind {kind!r}; expected one of {KINDS}",
                              source=source, column=name)
    if kind == "continuous":
        bounds = entry.get("bounds")
        lower = upper = None
        if bounds is not None:
            try:
                lower, upper = (float(v) for v in bounds)
            except (TypeError, ValueError):
                raise ValidationError("bounds must be a pair of numbers",
                                      source=source, column=name) from None
            if not (math.isfinite(lower) and math.isfinite(upper)) or not lower < upper:
                raise ValidationError(f"bounds must be finite with lower < upper, got {bounds}",
                                      source=source, column=name)
        return ColumnSpec(name, role, kind, lower=lower, upper=upper)
    levels = entry.get("levels")
    if not levels:
        raise ValidationError("discrete column needs a nonempty level list",
                              source=source, column=name)
    labels = tuple(str(v) for v in levels)
    if len(set(labels)) != len(labels):
        raise ValidationError("discrete levels must be distinct", source=source, column=name)
    return ColumnSpec(name, role, kind, levels=labels)


def parse_schema(document: str | bytes | Mapping[str, Any], *, dp_mode: bool = True,
                 source: str | None = None) -> Schema:
    """Build a :class:`Schema` from a JSON document (text or parsed mapping).

    In ``dp_mode`` every continuous covariate must carry bounds.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"schema is not valid JSON: {exc}", source=source) from None
    if not isinstance(document, Mapping) or not isinstance(document.get("columns"), list):
        raise ValidationError("schema must be an object with a 'columns' list", source=source)
    columns = tuple(_parse_column(entry, source) for entry in document["columns"])
    try:
        schema = Schema(columns)
    except ValidationError as exc:
        exc.source = source
        raise
    if dp_mode:
        schema.require_bounds(source)
    return schema


def read_schema(path: str | os.PathLike, *, dp_mode: bool = True) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read(), dp_mode=dp_mode, source=os.fspath(path))


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    columns: Mapping[str, np.ndarray] = field(repr=False)

    @property
    def n(self) -> int:
        first = next(iter(self.columns.values()))
        return int(first.shape[0])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def numeric(self, name: str) -> np.ndarray:
        """Column as ``float64`` suitable for a design matrix."""
        spec = self.schema.column(name)
        values = self.columns[name]
        if spec.is_continuous:
            return values.astype(float, copy=False)
        return spec.numeric_levels[values]

    def labels(self, name: str) -> list[str]:
        spec = self.schema.column(name)
        if spec.is_continuous:
            raise TypeError(f"column '{name}' is continuous")
        levels = spec.levels
        return [levels[i] for i in self.columns[name]]

    def equals(self, other: "Dataset") -> bool:
        if self.schema != other.schema:
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.schema.names)

    @classmethod
    def from_arrays(cls, schema: Schema, columns: Mapping[str, Iterable], *,
                    dp_mode: bool = False, validate: bool = True,
                    source: str | None = None) -> "Dataset":
        """Wrap column arrays. Discrete columns must already be level indices."""
        data: dict[str, np.ndarray] = {}
        n = None
        for spec in schema.columns:
            if spec.name not in columns:
                raise ValidationError("missing column", source=source, column=spec.name)
            dtype = float if spec.is_continuous else np.int64
            arr = np.array(columns[spec.name], dtype=dtype)
            if arr.ndim != 1:
                raise ValidationError("columns must be one-dimensional",
                                      source=source, column=spec.name)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValidationError("column lengths differ", source=source, column=spec.name)
            arr.flags.writeable = False
            data[spec.name] = arr
        ds = cls(schema, data)
        if validate:
            ds.validate(dp_mode=dp_mode, source=source)
        return ds

    def validate(self, *, dp_mode: bool = False, source: str | None = None) -> None:
        for spec in self.schema.columns:
            values = self.columns[spec.name]
            if spec.is_continuous:
                bad = ~np.isfinite(values)
                if bad.any():
                    raise ValidationError("missing or non-finite value", source=source,
                                          row=int(np.argmax(bad)) + 1, column=spec.name)
                if dp_mode and spec.has_bounds:
                    bad = (values < spec.lower) | (values > spec.upper)
                    if bad.any():
                        i = int(np.argmax(bad))
                        raise ValidationError(
                            f"value {values[i]!r} outside declared bounds "
                            f"[{spec.lower}, {spec.upper}]",
                            source=source, row=i + 1, column=spec.name)
            else:
                bad = (values < 0) | (values >= len(spec.levels))
                if bad.any():
                    raise ValidationError("undeclared level", source=source,
                                          row=int(np.argmax(bad)) + 1, column=spec.name)
        arms = self.schema.treatment_arms
        if arms:
            total = sum(self.columns[a] for a in arms)
            bad = total > 1
            if bad.any():
                raise ValidationError(
                    "treatment arms are mutually exclusive but several dummies equal 1",
                    source=source, row=int(np.argmax(bad)) + 1)


def _level_lookup(spec: ColumnSpec) -> tuple[dict[str, int], dict[float, int]]:
    exact = {lv: i for i, lv in enumerate(spec.levels)}
    numeric = {}
    for i, lv in enumerate(spec.levels):
        v = _as_float(lv)
        if v is not None:
            numeric.setdefault(v, i)
    return exact, numeric


def load_dataset(source: str | os.PathLike | bytes | IO[str], schema: Schema, *,
                 dp_mode: bool = True, name: str | None = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    ``source`` may be a path, raw bytes, or an open text stream. Column order in
    the file is irrelevant. Empty cells are rejected.
    """
    if isinstance(source, (bytes, bytearray)):
        stream: IO[str] = io.StringIO(bytes(source).decode("utf-8"))
        label = name or "<bytes>"
        close = False
    elif isinstance(source, (str, os.PathLike)):
        stream = open(source, encoding="utf-8", newline="")
        label = name or os.fspath(source)
        close = True
    else:
        stream = source
        label = name or getattr(source, "name", "<stream>")
        close = False
    try:
        reader = csv.reader(stream)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError("empty file, expected a header row", source=label) from None
        if len(set(header)) != len(header):
            raise ValidationError("duplicate header names", source=label)
        missing = [c for c in schema.names if c not in header]
        if missing:
            raise ValidationError(f"header lacks schema columns {missing}", source=label)
        extra = [h for h in header if h not in schema]
        if extra:
            raise ValidationError(f"header has columns not in schema {extra}", source=label)
        position = {h: i for i, h in enumerate(header)}
        specs = schema.columns
        lookups = {s.name: _level_lookup(s) for s in specs if not s.is_continuous}
        raw: dict[str, list] = {s.name: [] for s in specs}
        for rownum, record in enumerate(reader, start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != len(header):
                raise ValidationError(
                    f"expected {len(header)} fields, found {len(record)}",
                    source=label, row=rownum)
            for spec in specs:
                cell = record[position[spec.name]].strip()
                if cell == "":
                    raise ValidationError("missing value", source=label, row=rownum,
                                          column=spec.name)
                if spec.is_continuous:
                    value = _as_float(cell)
                    if value is None:
                        raise ValidationError(f"cannot parse {cell!r} as a finite number",
                                              source=label, row=rownum, column=spec.name)
                    raw[spec.name].append(value)
                else:
                    exact, numeric = lookups[spec.name]
                    idx = exact.get(cell)
                    if idx is None:
                        v = _as_float(cell)
                        idx = numeric.get(v) if v is not None else None
                    if idx is None:
                        raise ValidationError(f"undeclared level {cell!r}", source=label,
                                              row=rownum, column=spec.name)
                    raw[spec.name].append(idx)
    finally:
        if close:
            stream.close()
    if not raw[specs[0].name]:
        raise ValidationError("no data rows", source=label)
    return Dataset.from_arrays(schema, raw, dp_mode=dp_mode, source=label)


def _format_float(value: float) -> str:
    return repr(float(value))


def write_csv(dataset: Dataset, target: str | os.PathLike | IO[str]) -> None:
    """Write ``dataset`` with schema column order; floats use shortest round-trip repr."""
    own = isinstance(target, (str, os.PathLike))
    fh = open(target, "w", encoding="utf-8", newline="") if own else target
    try:
        writer = csv.writer(fh, lineterminator="\n")
        specs = dataset.schema.columns
        writer.writerow([s.name for s in specs])
        cols = []
        for s in specs:
            values = dataset.columns[s.name]
            if s.is_continuous:
                cols.append([_format_float(v) for v in values.tolist()])
            else:
                cols.append([s.levels[i] for i in values.tolist()])
        writer.writerows(zip(*cols))
    finally:
        if own:
            fh.close()


def dataset_to_csv_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_csv(dataset, buf)
    return buf.getvalue()


def with_observed_bounds(schema: Schema, dataset: Dataset,
                         names: Sequence[str] | None = None) -> Schema:
    """Fill missing continuous bounds from observed min/max (non-DP use only)."""
    updates = {}
    for spec in schema.columns:
        if names is not None and spec.name not in names:
            continue
        if spec.is_continuous and not spec.has_bounds:
            values = dataset.columns[spec.name]
            lo, hi = float(values.min()), float(values.max())
            if not lo < hi:
                lo, hi = lo - 0.5, hi + 0.5
            updates[spec.name] = replace(spec, lower=lo, upper=hi)
    return schema.with_columns(updates) if updates else schema
