"""Dataset container, CSV ingestion, validation and standardization.

A :class:`Dataset` holds one binary treatment vector, one binary outcome
vector and an ``n x p`` confounder matrix.  Categorical confounders are
expanded to dummy indicators at load time, dropping the most frequent level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

KINDS = ("binary", "continuous", "categorical")
_MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Raised when input data cannot be turned into a usable Dataset."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


@dataclass(frozen=True)
class Column:
    """Metadata for one confounder column.

    Dummy columns produced from a categorical source carry ``kind="categorical"``
    together with the source column name and the level they indicate.
    """

    name: str
    kind: str
    source: str | None = None
    level: str | None = None


@dataclass(frozen=True)
class Dataset:
    treatment: np.ndarray
    outcome: np.ndarray
    confounders: np.ndarray
    columns: tuple[Column, ...]
    # categorical source -> (reference level, dummy levels in column order)
    levels: Mapping[str, tuple[str, tuple[str, ...]]] = field(default_factory=dict)
    # continuous column -> (mean, sd) applied by standardize_continuous
    transforms: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.treatment, dtype=float).reshape(-1)
        y = np.array(self.outcome, dtype=float).reshape(-1)
        c = np.array(self.confounders, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1) if c.size else c.reshape(x.size, 0)
        cols = tuple(col if isinstance(col, Column) else Column(*col) for col in self.columns)
        if not (x.size == y.size == c.shape[0]):
            raise DataError(
                f"inconsistent lengths: treatment {x.size}, outcome {y.size}, "
                f"confounders {c.shape[0]}"
            )
        if c.shape[1] != len(cols):
            raise DataError(f"{c.shape[1]} confounder columns but {len(cols)} column records")
        for col in cols:
            if col.kind not in KINDS:
                raise DataError(f"column {col.name!r}: unknown kind {col.kind!r}")
        for arr in (x, y, c):
            arr.setflags(write=False)
        object.__setattr__(self, "treatment", x)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "confounders", c)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "levels", dict(self.levels))
        object.__setattr__(self, "transforms", dict(self.transforms))

    @property
    def n(self) -> int:
        return self.treatment.size

    @property
    def p(self) -> int:
        return self.confounders.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def design(self) -> np.ndarray:
        """Confounder matrix with a leading column of ones."""
        return np.column_stack([np.ones(self.n), self.confounders])

    def select(self, idx: Sequence[int]) -> "Dataset":
        """Keep only the confounder columns at positions ``idx``."""
        idx = list(idx)
        cols = tuple(self.columns[i] for i in idx)
        keep = {c.name for c in cols}
        return replace(
            self,
            confounders=self.confounders[:, idx],
            columns=cols,
            transforms={k: v for k, v in self.transforms.items() if k in keep},
        )

    def take(self, rows) -> "Dataset":
        """Row subset (used by resampling)."""
        rows = np.asarray(rows)
        return replace(
            self,
            treatment=self.treatment[rows],
            outcome=self.outcome[rows],
            confounders=self.confounders[rows],
        )

    @classmethod
    def from_arrays(cls, treatment, outcome, confounders, names=None, kinds=None) -> "Dataset":
        """Build a dataset from arrays, inferring binary vs continuous kinds."""
        c = np.asarray(confounders, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        p = c.shape[1]
        names = list(names) if names is not None else [f"C{j + 1}" for j in range(p)]
        if kinds is None:
            kinds = ["binary" if _is_binary(c[:, j]) else "continuous" for j in range(p)]
        cols = tuple(Column(nm, k) for nm, k in zip(names, kinds))
        return cls(treatment, outcome, c, cols)


@dataclass(frozen=True)
class ValidationReport:
    n: int
    p: int
    n_treated: int
    events_treated: int
    events_control: int
    columns: list[dict]
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _is_binary(v: np.ndarray) -> bool:
    v = v[~np.isnan(v)]
    return bool(np.all((v == 0) | (v == 1)))


def validate(d: Dataset) -> ValidationReport:
    """List every way ``d`` fails to be usable by the estimators."""
    violations = []
    x, y, c = d.treatment, d.outcome, d.confounders
    for label, v in (("treatment", x), ("outcome", y)):
        bad = np.flatnonzero(~np.isin(v, (0.0, 1.0)))
        if bad.size:
            violations.append(
                f"non-binary {label} at row(s) {', '.join(str(i + 1) for i in bad[:10])}"
            )
    if d.n == 0:
        violations.append("empty dataset")
    else:
        if not np.any(x == 1):
            violations.append("empty treated arm")
        if not np.any(x == 0):
            violations.append("empty control arm")
    if d.p == 0:
        violations.append("no confounder columns")
    names = d.names
    dup = sorted({nm for nm in names if names.count(nm) > 1})
    if dup:
        violations.append(f"duplicate column names: {', '.join(dup)}")

    summaries = []
    for j, col in enumerate(d.columns):
        v = c[:, j]
        missing = np.flatnonzero(~np.isfinite(v))
        for i in missing[:10]:
            violations.append(f"missing value at row {i + 1}, column {col.name!r}")
        finite = v[np.isfinite(v)]
        s = {"name": col.name, "kind": col.kind,
             "min": float(finite.min()) if finite.size else math.nan,
             "max": float(finite.max()) if finite.size else math.nan}
        if col.kind in ("binary", "categorical"):
            if not _is_binary(finite):
                violations.append(f"non-binary values in binary column {col.name!r}")
            s["prevalence"] = float(finite.mean()) if finite.size else math.nan
        summaries.append(s)

    return ValidationReport(
        n=d.n,
        p=d.p,
        n_treated=int(np.sum(x == 1)),
        events_treated=int(np.sum((x == 1) & (y == 1))),
        events_control=int(np.sum((x == 0) & (y == 1))),
        columns=summaries,
        violations=violations,
    )


def _read_schema(schema) -> dict:
    if isinstance(schema, (str, Path)):
        with open(schema, encoding="utf-8") as fh:
            schema = json.load(fh)
    schema = dict(schema)
    for key in ("treatment", "outcome", "confounders"):
        if key not in schema:
            raise DataError(f"schema is missing {key!r}")
    confs = []
    for entry in schema["confounders"]:
        if isinstance(entry, str):
            entry = {"name": entry, "kind": "continuous"}
        kind = entry.get("kind", "continuous")
        if kind not in KINDS:
            raise DataError(f"schema: unknown kind {kind!r} for {entry.get('name')!r}")
        confs.append((entry["name"], kind))
    if not confs:
        raise DataError("schema names no confounder columns")
    return {"treatment": schema["treatment"], "outcome": schema["outcome"], "confounders": confs}


def _parse_number(cell: str, row: int, name: str) -> float:
    if cell.strip().lower() in _MISSING:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"unparseable cell {cell!r} at row {row}, column {name!r}") from None


def load_dataset(path, schema) -> Dataset:
    """Read a CSV file (header row required) into a validated Dataset.

    ``schema`` is a mapping or a path to a JSON file of the form
    ``{"treatment": name, "outcome": name, "confounders": [{"name", "kind"}]}``.
    Raises :class:`DataError` for unreadable input and for any validation
    violation; missing values are rejected rather than imputed.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    sch = _read_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    dup = sorted({h for h in header if header.count(h) > 1})
    if dup:
        raise DataError(f"duplicate column names: {', '.join(dup)}")
    wanted = [sch["treatment"], sch["outcome"]] + [nm for nm, _ in sch["confounders"]]
    absent = [nm for nm in wanted if nm not in header]
    if absent:
        raise DataError(f"columns not found in header: {', '.join(absent)}")
    pos = {h: i for i, h in enumerate(header)}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} cells, header has {len(header)}")

    def numeric(name):
        return np.array([_parse_number(row[pos[name]], r, name) for r, row in enumerate(rows, 1)])

    x = numeric(sch["treatment"])
    y = numeric(sch["outcome"])
    blocks, cols, levels = [], [], {}
    for name, kind in sch["confounders"]:
        if kind != "categorical":
            blocks.append(numeric(name)[:, None])
            cols.append(Column(name, kind))
            continue
        raw = [row[pos[name]].strip() for row in rows]
        for r, v in enumerate(raw, 1):
            if v.lower() in _MISSING:
                raise DataError(f"missing value at row {r}, column {name!r}")
        observed = sorted(set(raw))
        counts = {lv: raw.count(lv) for lv in observed}
        reference = max(observed, key=lambda lv: (counts[lv], -observed.index(lv)))
        kept = tuple(lv for lv in observed if lv != reference)
        levels[name] = (reference, kept)
        for lv in kept:
            blocks.append(np.array([1.0 if v == lv else 0.0 for v in raw])[:, None])
            cols.append(Column(f"{name}={lv}", "categorical", source=name, level=lv))
    c = np.hstack(blocks) if blocks else np.empty((len(rows), 0))
    d = Dataset(x, y, c, tuple(cols), levels=levels)
    report = validate(d)
    if not report.ok:
        raise DataError("; ".join(report.violations), report.violations)
    return d


def recover_categorical(d: Dataset, source: str) -> list[str]:
    """Invert dummy expansion for one categorical source column."""
    reference, kept = d.levels[source]
    idx = [j for j, c in enumerate(d.columns) if c.source == source]
    out = []
    for row in d.confounders[:, idx]:
        hit = np.flatnonzero(row == 1)
        out.append(kept[hit[0]] if hit.size else reference)
    return out


def standardize_continuous(d: Dataset) -> Dataset:
    """Center and scale continuous columns to sample mean 0 and SD 1 (ddof=1).

    Binary and dummy columns are left alone.  The applied (mean, sd) pairs are
    composed with any earlier transform and stored on ``transforms``.
    """
    c = np.array(d.confounders)
    transforms = dict(d.transforms)
    for j, col in enumerate(d.columns):
        if col.kind != "continuous":
            continue
        v = c[:, j]
        mean = v.mean()
        sd = v.std(ddof=1) if v.size > 1 else 0.0
        if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, abs(mean)):
            raise DataError(f"zero-variance continuous column {col.name!r}")
        c[:, j] = (v - mean) / sd
        m0, s0 = transforms.get(col.name, (0.0, 1.0))
        transforms[col.name] = (m0 + s0 * mean, s0 * sd)
    return replace(d, confounders=c, transforms=transforms)


def is_standardized(d: Dataset, tol: float = 1e-8) -> bool:
    for j, col in enumerate(d.columns):
        if col.kind != "continuous":
            continue
        v = d.confounders[:, j]
        if abs(v.mean()) > tol or abs(v.std(ddof=1) - 1.0) > tol:
            return False
    return True
