"""Blood-value records, CSV ingestion with mean imputation, and stratified folds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import CsvParseError, IngestionError, SchemaError

# Table order of the 51 routine blood values.
BLOOD_FEATURES = (
    "CRP", "D-Dimer", "Ferritin", "Fibrinogen", "INR", "PT", "PCT", "ESR",
    "Troponin", "aPTT", "LYM", "NEU", "PLT", "WBC", "BASO", "EOS", "HCT",
    "HGB", "MCH", "MCHC", "MCV", "MONO", "MPV", "PDW", "RBC", "RDW", "ALT",
    "AST", "Albumin", "ALP", "Amylase", "CK-MB", "D-Bil", "GGT", "Glucose",
    "HDL-C", "Calcium", "Chlorine", "Cholesterol", "Creatinine", "CK", "LDH",
    "LDL", "Potassium", "Sodium", "T-Bil", "TP", "Triglyceride", "eGFR",
    "Urea", "UA",
)

LABEL_COLUMN = "label"


@dataclass(frozen=True)
class RbvRecord:
    values: tuple
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def __len__(self):
        return len(self.values)


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix plus optional binary labels.

    Records are stored column-friendly as ``X`` (n_records, n_features) and
    ``y``; :attr:`records` materialises :class:`RbvRecord` views on demand.
    """

    feature_names: tuple
    X: np.ndarray
    y: Optional[np.ndarray] = None
    schema_id: str = "custom"

    def __post_init__(self):
        names = tuple(str(n) for n in self.feature_names)
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {', '.join(dup)}")
        X = _readonly(self.X)
        if X.ndim != 2 or X.shape[1] != len(names):
            raise SchemaError(
                f"matrix shape {X.shape} does not match {len(names)} feature names"
            )
        if not np.all(np.isfinite(X)):
            raise IngestionError("dataset contains non-finite values")
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (X.shape[0],):
                raise SchemaError(f"label vector shape {y.shape} != ({X.shape[0]},)")
            if not np.all((y == 0) | (y == 1)):
                raise IngestionError("labels must be 0 or 1")
            y = y.astype(np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "y", y)

    @classmethod
    def from_records(cls, feature_names, records, schema_id="custom"):
        records = list(records)
        n = len(feature_names)
        for i, r in enumerate(records):
            if len(r.values) != n:
                raise SchemaError(f"record {i} has {len(r.values)} values, expected {n}")
        X = np.array([r.values for r in records], dtype=np.float64).reshape(len(records), n)
        labels = [r.label for r in records]
        if all(lab is None for lab in labels):
            y = None
        elif any(lab is None for lab in labels):
            raise IngestionError("either every record or no record must be labeled")
        else:
            y = np.array(labels, dtype=np.int64)
        return cls(tuple(feature_names), X, y, schema_id)

    @property
    def records(self):
        if self.y is None:
            return [RbvRecord(tuple(row)) for row in self.X]
        return [RbvRecord(tuple(row), int(lab)) for row, lab in zip(self.X, self.y)]

    @property
    def n_features(self):
        return len(self.feature_names)

    @property
    def labeled(self):
        return self.y is not None

    def __len__(self):
        return self.X.shape[0]

    def subset(self, rows=None, features=None):
        """Return a dataset restricted to ``rows`` and/or feature indices."""
        X, y, names = self.X, self.y, self.feature_names
        if rows is not None:
            rows = np.asarray(rows)
            X = X[rows]
            y = None if y is None else y[rows]
        if features is not None:
            features = list(features)
            X = X[:, features]
            names = tuple(names[i] for i in features)
        return Dataset(names, X, y, self.schema_id)

    def class_counts(self):
        if self.y is None:
            raise IngestionError("dataset is unlabeled")
        return {c: int(np.sum(self.y == c)) for c in (0, 1)}


def _parse_cell(text, row, column):
    try:
        v = float(text)
    except ValueError:
        raise CsvParseError(f"non-numeric cell {text!r}", row, column) from None
    if not math.isfinite(v):
        raise CsvParseError(f"non-finite cell {text!r}", row, column)
    return v


def load_csv(path, schema: Optional[Sequence[str]] = None, missing=("",), schema_id=None):
    """Read a header-first CSV into a :class:`Dataset`.

    Missing cells (any string in ``missing``, compared after stripping) are
    replaced by the mean of the present values in that column. A ``label``
    column, when present, must hold 0/1 in every row. Columns are reordered
    to ``schema`` when one is given.
    """
    missing = {m.strip() for m in missing}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    feature_cols = [h for h in header if h != LABEL_COLUMN]
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"duplicate columns: {', '.join(dup)}")
    if schema is not None:
        schema = tuple(schema)
        missing_cols = [s for s in schema if s not in feature_cols]
        unknown_cols = [h for h in feature_cols if h not in schema]
        if missing_cols or unknown_cols:
            parts = []
            if missing_cols:
                parts.append("missing columns: " + ", ".join(missing_cols))
            if unknown_cols:
                parts.append("unknown columns: " + ", ".join(unknown_cols))
            raise SchemaError("; ".join(parts), missing_cols, unknown_cols)
        names = schema
    else:
        names = tuple(feature_cols)

    col_index = {h: i for i, h in enumerate(header)}
    n = len(rows)
    X = np.empty((n, len(names)), dtype=np.float64)
    present = np.ones((n, len(names)), dtype=bool)
    y = np.empty(n, dtype=np.int64) if LABEL_COLUMN in col_index else None

    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise CsvParseError(
                f"expected {len(header)} cells, found {len(row)}", line, None
            )
        for j, name in enumerate(names):
            cell = row[col_index[name]].strip()
            if cell in missing:
                present[r, j] = False
                X[r, j] = 0.0
            else:
                X[r, j] = _parse_cell(cell, line, name)
        if y is not None:
            cell = row[col_index[LABEL_COLUMN]].strip()
            v = _parse_cell(cell, line, LABEL_COLUMN) if cell not in missing else None
            if v not in (0.0, 1.0):
                raise CsvParseError(f"label must be 0 or 1, got {cell!r}", line, LABEL_COLUMN)
            y[r] = int(v)

    for j, name in enumerate(names):
        mask = present[:, j]
        if mask.all():
            continue
        if not mask.any():
            raise IngestionError(f"column {name!r} has no present values to impute from")
        X[~mask, j] = X[mask, j].mean()

    if schema_id is None:
        schema_id = "rbv51" if names == BLOOD_FEATURES else "custom"
    return Dataset(names, X, y, schema_id)


def save_csv(dataset: Dataset, path):
    """Write ``dataset`` so that :func:`load_csv` reads it back bit-identically."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(dataset.feature_names)
        if dataset.y is not None:
            header.append(LABEL_COLUMN)
        w.writerow(header)
        for i, row in enumerate(dataset.X):
            cells = [repr(float(v)) for v in row]
            if dataset.y is not None:
                cells.append(str(int(dataset.y[i])))
            w.writerow(cells)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of_record: tuple = field(repr=False)

    def test_indices(self, fold):
        return np.flatnonzero(np.asarray(self.fold_of_record) == fold)

    def train_indices(self, fold):
        return np.flatnonzero(np.asarray(self.fold_of_record) != fold)

    def __iter__(self):
        """Yield ``(train_idx, test_idx)`` for each fold in order."""
        folds = np.asarray(self.fold_of_record)
        for f in range(self.k):
            yield np.flatnonzero(folds != f), np.flatnonzero(folds == f)

    def __len__(self):
        return len(self.fold_of_record)


def _stratified_assign(y, k, seed):
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in (0, 1):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            raise ValueError(f"class {c} has {len(members)} records, fewer than k={k}")
        members = rng.permutation(members)
        # the round-robin counter carries over between classes
        folds[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k
    return folds


def stratified_folds(dataset: Dataset, k: int, seed: int = 0) -> FoldAssignment:
    """Shuffle each class with ``seed`` and deal its records round-robin into ``k`` folds."""
    if dataset.y is None:
        raise IngestionError("stratified folds need a labeled dataset")
    return FoldAssignment(k, tuple(int(f) for f in _stratified_assign(dataset.y, k, seed)))


class StratifiedRoundRobinKFold:
    """scikit-learn compatible splitter producing the same folds as :func:`stratified_folds`."""

    def __init__(self, n_splits=5, seed=0):
        self.n_splits = n_splits
        self.seed = seed

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_splits

    def split(self, X, y, groups=None):
        folds = _stratified_assign(y, self.n_splits, self.seed)
        for f in range(self.n_splits):
            yield np.flatnonzero(folds != f), np.flatnonzero(folds == f)
