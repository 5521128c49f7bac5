"""Observational datasets, covariate strata and common-support checks."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import DataError, ModelError
from .model import CausalGraph, CptSet


def seqsum(values) -> float:
    """Left-to-right sum in index order (no pairwise reduction)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return 0.0
    return float(np.cumsum(arr)[-1])


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of categorical covariates, binary treatment and outcome.

    ``outcome_kind`` is ``"binary"`` (codes 0/1) or ``"real"`` (finite floats).
    """

    covariates: Mapping[str, np.ndarray]
    treatment: np.ndarray
    outcome: np.ndarray
    treatment_name: str = "z"
    outcome_name: str = "y"
    outcome_kind: str = "binary"

    def __post_init__(self):
        z = np.asarray(self.treatment)
        n = z.shape[0] if z.ndim == 1 else -1
        if n < 1:
            raise DataError("empty dataset")
        covs = {}
        for name, col in self.covariates.items():
            col = np.asarray(col)
            if col.shape != (n,):
                raise DataError(f"column {name!r} has length {col.shape}, expected {n}")
            if col.size and (not np.all(np.isfinite(col.astype(float))) or np.any(col != np.round(col))
                             or np.any(col < 0)):
                raise DataError(f"column {name!r} must hold non-negative integer codes")
            covs[str(name)] = _frozen(col, np.int64)
        if not np.all(np.isin(z, (0, 1))):
            raise DataError("treatment values must be 0 or 1")
        y = np.asarray(self.outcome)
        if y.shape != (n,):
            raise DataError(f"outcome has length {y.shape}, expected {n}")
        if self.outcome_kind == "binary":
            if not np.all(np.isin(y, (0, 1))):
                raise DataError("binary outcome values must be 0 or 1")
            y = _frozen(y, np.int64)
        elif self.outcome_kind == "real":
            y = _frozen(y, float)
            if not np.all(np.isfinite(y)):
                raise DataError("real outcome values must be finite")
        else:
            raise DataError(f"unknown outcome kind {self.outcome_kind!r}")
        names = list(covs) + [self.treatment_name, self.outcome_name]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate column names {names}")
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "treatment", _frozen(z, np.int64))
        object.__setattr__(self, "outcome", y)

    @classmethod
    def from_arrays(cls, X, z, y, covariate_names: Sequence[str] | None = None, outcome_kind: str | None = None,
                    treatment_name: str = "z", outcome_name: str = "y") -> "Dataset":
        X = np.asarray(X)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if covariate_names is None:
            covariate_names = [f"x{j + 1}" for j in range(X.shape[1])] if X.shape[1] > 1 else ["x"]
        if len(covariate_names) != X.shape[1]:
            raise DataError("covariate_names does not match number of columns")
        if outcome_kind is None:
            outcome_kind = "binary" if np.all(np.isin(np.asarray(y), (0, 1))) else "real"
        return cls({name: X[:, j] for j, name in enumerate(covariate_names)}, z, y,
                   treatment_name, outcome_name, outcome_kind)

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariates)

    @property
    def columns(self) -> tuple[str, ...]:
        return self.covariate_names + (self.treatment_name, self.outcome_name)

    def column(self, name: str) -> np.ndarray:
        if name in self.covariates:
            return self.covariates[name]
        if name == self.treatment_name:
            return self.treatment
        if name == self.outcome_name:
            return self.outcome
        raise DataError(f"unknown column {name!r}")

    def covariate_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.covariate_names if names is None else tuple(names)
        for name in names:
            if name not in self.covariates:
                raise DataError(f"unknown covariate column {name!r}")
        if not names:
            return np.zeros((self.n, 0), dtype=np.int64)
        return np.column_stack([self.covariates[c] for c in names])

    def with_outcome(self, y, outcome_kind: str | None = None) -> "Dataset":
        kind = outcome_kind or ("binary" if np.all(np.isin(np.asarray(y), (0, 1))) else "real")
        return Dataset(self.covariates, self.treatment, y, self.treatment_name, self.outcome_name, kind)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset({c: v[rows] for c, v in self.covariates.items()}, self.treatment[rows], self.outcome[rows],
                       self.treatment_name, self.outcome_name, self.outcome_kind)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.columns == other.columns and self.outcome_kind == other.outcome_kind
                and all(np.array_equal(self.column(c), other.column(c)) for c in self.columns)
                and self.outcome.dtype == other.outcome.dtype)

    __hash__ = None


@dataclass(frozen=True)
class Schema:
    """Column roles for CSV ingestion; ``covariates=None`` means every other column."""

    treatment: str = "z"
    outcome: str = "y"
    covariates: Sequence[str] | None = None
    outcome_kind: str = "auto"


def _parse_int(cell, row, col):
    text = cell.strip()
    try:
        return int(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: expected an integer code, got {cell!r}") from None


def load_csv(path, schema: Schema = Schema()) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    Row numbers in error messages count data rows from 1.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for role, name in (("treatment", schema.treatment), ("outcome", schema.outcome)):
        if name not in header:
            raise DataError(f"{path}: {role} column {name!r} not in header {header}")
    if schema.treatment == schema.outcome:
        raise DataError("treatment and outcome must be different columns")
    if schema.covariates is None:
        covs = [h for h in header if h not in (schema.treatment, schema.outcome)]
    else:
        covs = list(schema.covariates)
        for c in covs:
            if c not in header:
                raise DataError(f"{path}: covariate column {c!r} not in header")
            if c in (schema.treatment, schema.outcome):
                raise DataError(f"column {c!r} cannot be both covariate and {('treatment' if c == schema.treatment else 'outcome')}")
    if not rows:
        raise DataError("empty dataset")

    pos = {h: i for i, h in enumerate(header)}
    cov_vals = {c: [] for c in covs}
    z_vals, y_cells = [], []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        for c in covs:
            cell = row[pos[c]]
            if cell.strip() == "":
                raise DataError(f"row {r}, column {c!r}: missing value")
            v = _parse_int(cell, r, c)
            if v < 0:
                raise DataError(f"row {r}, column {c!r}: negative code {v}")
            cov_vals[c].append(v)
        zc = row[pos[schema.treatment]]
        if zc.strip() == "":
            raise DataError(f"row {r}, column {schema.treatment!r}: missing value")
        z = _parse_int(zc, r, schema.treatment)
        if z not in (0, 1):
            raise DataError(f"row {r}, column {schema.treatment!r}: treatment must be 0 or 1, got {z}")
        z_vals.append(z)
        yc = row[pos[schema.outcome]].strip()
        if yc == "":
            raise DataError(f"row {r}, column {schema.outcome!r}: missing value")
        y_cells.append((r, yc))

    kind = schema.outcome_kind
    if kind == "auto":
        kind = "binary" if all(c in ("0", "1") for _, c in y_cells) else "real"
    if kind == "binary":
        y = []
        for r, c in y_cells:
            v = _parse_int(c, r, schema.outcome)
            if v not in (0, 1):
                raise DataError(f"row {r}, column {schema.outcome!r}: binary outcome must be 0 or 1, got {c!r}")
            y.append(v)
    elif kind == "real":
        y = []
        for r, c in y_cells:
            try:
                v = float(c)
            except ValueError:
                raise DataError(f"row {r}, column {schema.outcome!r}: expected a number, got {c!r}") from None
            if not math.isfinite(v):
                raise DataError(f"row {r}, column {schema.outcome!r}: non-finite outcome {c!r}")
            y.append(v)
    else:
        raise DataError(f"unknown outcome kind {kind!r}")
    return Dataset({c: np.array(v, dtype=np.int64) for c, v in cov_vals.items()},
                   np.array(z_vals, dtype=np.int64), np.array(y), schema.treatment, schema.outcome, kind)


def write_csv(ds: Dataset, path, order: Sequence[str] = ()) -> None:
    """Write ``ds`` with a header row; ``order`` optionally permutes the columns."""
    names = tuple(order) or ds.columns
    if sorted(names) != sorted(ds.columns):
        raise DataError(f"column order {names} does not match dataset columns {ds.columns}")
    text = {}
    for name in names:
        col = ds.column(name)
        if name == ds.outcome_name and ds.outcome_kind == "real":
            text[name] = [repr(float(v)) for v in col]
        else:
            text[name] = [str(int(v)) for v in col]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*(text[c] for c in names)):
            fh.write(",".join(row) + "\n")


def discretize(values, k: int) -> np.ndarray:
    """Codes ``0..k-1`` by k-quantile binning; values on a cut point go to the lower bin."""
    values = np.asarray(values, dtype=float)
    if k < 1:
        raise DataError("k must be at least 1")
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise DataError("discretize needs a non-empty column of finite values")
    cuts = np.quantile(values, [j / k for j in range(1, k)])
    return np.searchsorted(cuts, values, side="left").astype(np.int64)


@dataclass(frozen=True)
class Stratum:
    key: tuple
    rows: np.ndarray
    n: int
    n_treated: int
    n_control: int
    sum_y_treated: float
    sum_y_control: float

    @property
    def mean_treated(self) -> float:
        return self.sum_y_treated / self.n_treated if self.n_treated else math.nan

    @property
    def mean_control(self) -> float:
        return self.sum_y_control / self.n_control if self.n_control else math.nan

    @property
    def supported(self) -> bool:
        return self.n_treated > 0 and self.n_control > 0


@dataclass(frozen=True, eq=False)
class StratumIndex:
    """Observed covariate configurations, sorted lexicographically."""

    covariates: tuple[str, ...]
    n: int
    strata: tuple[Stratum, ...]
    record_stratum: np.ndarray
    lookup: Mapping[tuple, int] = field(repr=False)

    def __len__(self):
        return len(self.strata)

    def __getitem__(self, key) -> Stratum:
        return self.strata[self.lookup[tuple(key)]]

    def keys(self):
        return [s.key for s in self.strata]


def build_strata(ds: Dataset, covariates: Sequence[str] | None = None) -> StratumIndex:
    names = ds.covariate_names if covariates is None else tuple(covariates)
    X = ds.covariate_matrix(names)
    if X.shape[1] == 0:
        keys = np.zeros((1, 0), dtype=np.int64)
        inverse = np.zeros(ds.n, dtype=np.int64)
    else:
        keys, inverse = np.unique(X, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    z = ds.treatment
    y = ds.outcome.astype(float)
    strata = []
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    for s in range(len(keys)):
        rows = order[bounds[s]:bounds[s + 1]]
        rows.setflags(write=False)
        zt = z[rows]
        yt = y[rows]
        strata.append(Stratum(
            key=tuple(int(v) for v in keys[s]),
            rows=rows,
            n=int(rows.size),
            n_treated=int(np.count_nonzero(zt == 1)),
            n_control=int(np.count_nonzero(zt == 0)),
            sum_y_treated=seqsum(yt[zt == 1]),
            sum_y_control=seqsum(yt[zt == 0]),
        ))
    inverse = _frozen(inverse, np.int64)
    return StratumIndex(names, ds.n, tuple(strata), inverse, {s.key: i for i, s in enumerate(strata)})


@dataclass(frozen=True)
class SupportReport:
    violations: tuple[tuple, ...]
    mass: float
    covariates: tuple[str, ...] = ()
    details: tuple[dict, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"covariates": list(self.covariates), "violations": [list(k) for k in self.violations],
                "mass": self.mass, "details": [dict(d) for d in self.details]}


def check_support(index: StratumIndex) -> SupportReport:
    bad = [s for s in index.strata if not s.supported]
    mass = seqsum([s.n / index.n for s in bad])
    details = tuple({"stratum": list(s.key), "n": s.n, "n_treated": s.n_treated, "n_control": s.n_control}
                    for s in bad)
    return SupportReport(tuple(s.key for s in bad), mass, index.covariates, details)


def fit_mle(ds: Dataset, graph: CausalGraph) -> CptSet:
    """Empirical conditional frequencies for every node of ``graph``.

    Parent configurations never observed get a uniform row; their
    ``(node, configuration)`` pairs are listed in ``CptSet.unidentified``.
    """
    graph.require_valid()
    if ds.outcome_kind != "binary":
        raise DataError("fit_mle needs a categorical outcome")
    cols = {}
    for node in graph.nodes:
        try:
            col = ds.column(node.name)
        except DataError:
            raise DataError(f"graph node {node.name!r} is not a dataset column") from None
        if col.size and int(col.max()) >= node.card:
            raise ModelError(f"column {node.name!r} has code {int(col.max())} but node cardinality is {node.card}")
        cols[node.name] = col.astype(np.int64)
    tables = {}
    flags = []
    for node in graph.nodes:
        parents = graph.parents[node.name]
        pcards = tuple(graph.card(p) for p in parents)
        shape = pcards + (node.card,)
        flat = np.ravel_multi_index(tuple(cols[p] for p in parents) + (cols[node.name],), shape)
        counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape).astype(float)
        totals = counts.sum(axis=-1, keepdims=True)
        table = np.empty(shape)
        for config in itertools.product(*(range(c) for c in pcards)):
            tot = float(totals[config][0])
            if tot == 0.0:
                table[config] = 1.0 / node.card
                flags.append((node.name, config))
            else:
                table[config] = counts[config] / tot
        tables[node.name] = table
    return CptSet(tables, unidentified=flags)
