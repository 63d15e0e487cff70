"""Tabular choice data: loading, validation, z-scoring and train/validation splits."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})
COEFFICIENT_MODES = ("generic", "alternative_specific")


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with named columns and a 1-based ordinal label per row.

    Arrays are copied and marked read-only on construction, so instances can
    be shared freely.
    """

    features: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray
    K: int
    category_names: tuple[str, ...] | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1 and len(self.feature_names) == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise DataError("features must be a 2-d array")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DataError(
                f"labels length {labels.shape} does not match {features.shape[0]} rows")
        if labels.size and not np.all(labels == np.round(labels)):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != features.shape[1]:
            raise DataError(
                f"{len(names)} feature names for {features.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DataError("duplicate feature names")
        if int(self.K) < 1:
            raise DataError("K must be positive")
        if labels.size and (labels.min() < 1 or labels.max() > self.K):
            bad = labels[(labels < 1) | (labels > self.K)][0]
            raise DataError(f"label out of range: {bad} not in 1..{self.K}")
        if not np.all(np.isfinite(features)):
            raise DataError("non-finite feature value")
        if self.category_names is not None and len(self.category_names) != self.K:
            raise DataError("category_names must have K entries")
        object.__setattr__(self, "features", _frozen_array(features, np.float64))
        object.__setattr__(self, "labels", _frozen_array(labels, np.int64))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "K", int(self.K))
        if self.category_names is not None:
            object.__setattr__(self, "category_names", tuple(self.category_names))

    @property
    def N(self) -> int:
        return self.features.shape[0]

    def __len__(self):
        return self.N

    def column_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.column_index(name)]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.column_index(n) for n in names]
        return self.features[:, idx]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.feature_names, self.labels[rows],
                       self.K, self.category_names)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.feature_names, self.labels, self.K, self.category_names)

    def with_column(self, name: str, values) -> "Dataset":
        features = np.array(self.features)
        features[:, self.column_index(name)] = values
        return self.with_features(features)

    def category_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K + 1)[1:]

    def require_all_categories(self):
        missing = [k + 1 for k, c in enumerate(self.category_counts()) if c == 0]
        if self.N == 0:
            raise DataError("empty dataset")
        if missing:
            raise DataError(f"categories {missing} have no observations")


@dataclass(frozen=True)
class DesignSpec:
    """Which columns enter the utility, and how."""

    feature_columns: tuple[str, ...]
    label_column: str = "y"
    coefficient_mode: str = "generic"
    standardize_columns: tuple[str, ...] = ()
    exclusions: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        cols = tuple(self.feature_columns)
        if not cols:
            raise DataError("feature_columns must be non-empty")
        if len(set(cols)) != len(cols):
            raise DataError("feature_columns must be distinct")
        if self.coefficient_mode not in COEFFICIENT_MODES:
            raise DataError(f"coefficient_mode must be one of {COEFFICIENT_MODES}")
        std = tuple(self.standardize_columns)
        for c in std:
            if c not in cols:
                raise DataError(f"standardize column {c!r} is not a feature column")
        excl = tuple((str(c), int(k)) for c, k in self.exclusions)
        for c, k in excl:
            if c not in cols:
                raise DataError(f"exclusion references unknown column {c!r}")
            if k < 1:
                raise DataError(f"exclusion references invalid category {k}")
        if excl and self.coefficient_mode != "alternative_specific":
            raise DataError("per-category exclusions require alternative_specific mode")
        object.__setattr__(self, "feature_columns", cols)
        object.__setattr__(self, "standardize_columns", std)
        object.__setattr__(self, "exclusions", excl)

    def validate_for(self, ds: Dataset):
        for c in self.feature_columns:
            ds.column_index(c)
        for c, k in self.exclusions:
            if k > ds.K:
                raise DataError(f"exclusion ({c}, {k}) references category beyond K={ds.K}")

    def coefficient_mask(self, K: int) -> np.ndarray:
        """(K, p) boolean mask of free coefficients in alternative-specific mode."""
        mask = np.ones((K, len(self.feature_columns)), dtype=bool)
        for c, k in self.exclusions:
            mask[k - 1, self.feature_columns.index(c)] = False
        return mask

    def to_dict(self) -> dict:
        return {
            "feature_columns": list(self.feature_columns),
            "label_column": self.label_column,
            "coefficient_mode": self.coefficient_mode,
            "standardize_columns": list(self.standardize_columns),
            "exclusions": [[c, k] for c, k in self.exclusions],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DesignSpec":
        return cls(
            feature_columns=tuple(d["feature_columns"]),
            label_column=d.get("label_column", "y"),
            coefficient_mode=d.get("coefficient_mode", "generic"),
            standardize_columns=tuple(d.get("standardize_columns", ())),
            exclusions=tuple((c, int(k)) for c, k in d.get("exclusions", ())),
        )


@dataclass(frozen=True)
class ScalingParams:
    """Per-column mean and population standard deviation."""

    columns: tuple[str, ...] = ()
    means: tuple[float, ...] = ()
    sds: tuple[float, ...] = ()

    def __post_init__(self):
        if not (len(self.columns) == len(self.means) == len(self.sds)):
            raise DataError("scaling columns, means and sds must align")
        if any(not (s > 0) for s in self.sds):
            raise DataError("scaling standard deviations must be positive")

    def __bool__(self):
        return bool(self.columns)

    def transform_values(self, column: str, values):
        values = np.asarray(values, dtype=np.float64)
        if column not in self.columns:
            return values
        i = self.columns.index(column)
        return (values - self.means[i]) / self.sds[i]

    def apply(self, ds: Dataset) -> Dataset:
        if not self.columns:
            return ds
        features = np.array(ds.features)
        for c, m, s in zip(self.columns, self.means, self.sds):
            j = ds.column_index(c)
            features[:, j] = (features[:, j] - m) / s
        return ds.with_features(features)

    def invert(self, ds: Dataset) -> Dataset:
        if not self.columns:
            return ds
        features = np.array(ds.features)
        for c, m, s in zip(self.columns, self.means, self.sds):
            j = ds.column_index(c)
            features[:, j] = features[:, j] * s + m
        return ds.with_features(features)

    def to_dict(self) -> dict:
        return {c: {"mean": m, "sd": s} for c, m, s in zip(self.columns, self.means, self.sds)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalingParams":
        cols = tuple(d)
        return cls(cols, tuple(float(d[c]["mean"]) for c in cols),
                   tuple(float(d[c]["sd"]) for c in cols))


def standardize(ds: Dataset, spec: DesignSpec) -> tuple[Dataset, ScalingParams]:
    """Z-score the flagged columns using this dataset's mean and population sd."""
    cols, means, sds = [], [], []
    for c in spec.standardize_columns:
        x = ds.column(c)
        sd = float(np.std(x))
        if not sd > 0:
            raise DataError(f"column {c!r} has zero variance and cannot be standardized")
        cols.append(c)
        means.append(float(np.mean(x)))
        sds.append(sd)
    params = ScalingParams(tuple(cols), tuple(means), tuple(sds))
    return params.apply(ds), params


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie in (0, 1)")
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise DataError(
            f"split of {n} rows at fraction {train_fraction} leaves an empty partition")
    if n < 10:
        raise DataError(f"split needs at least 10 rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(ds: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded disjoint partition into (train, validation)."""
    train_idx, val_idx = split_indices(ds.N, train_fraction, seed)
    return ds.subset(train_idx), ds.subset(val_idx)


def design_matrix(ds: Dataset, spec: DesignSpec) -> np.ndarray:
    return np.ascontiguousarray(ds.columns(spec.feature_columns))


def _read_label_map(label_map) -> dict[str, int] | None:
    if label_map is None:
        return None
    if isinstance(label_map, (str, Path)):
        with open(label_map, encoding="utf-8") as fh:
            label_map = json.load(fh)
    return {str(k): int(v) for k, v in label_map.items()}


def load_csv(path, label_column: str, K: int, *, label_map=None,
             strict: bool = True, feature_columns: Iterable[str] | None = None) -> Dataset:
    """Read a header-first UTF-8 CSV into a validated Dataset.

    Every non-label column becomes a feature unless ``feature_columns`` narrows
    the selection. ``label_map`` (a dict or a path to a JSON object such as
    ``{"low": 1, "medium": 2}``) translates named labels. Rows with missing
    cells raise in strict mode and are dropped, with a logged count, otherwise.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    mapping = _read_label_map(label_map)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header")
        if feature_columns is None:
            names = [h for h in header if h != label_column]
        else:
            names = list(feature_columns)
            for n in names:
                if n not in header:
                    raise DataError(f"column {n!r} not in header")
        label_pos = header.index(label_column)
        feat_pos = [header.index(n) for n in names]

        rows, labels, dropped = [], [], 0
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(f"line {line_no}: expected {len(header)} cells, got {len(raw)}")
            cells = [raw[i].strip() for i in feat_pos]
            label_cell = raw[label_pos].strip()
            if any(c.lower() in MISSING_TOKENS for c in cells + [label_cell]):
                if strict:
                    raise DataError(f"line {line_no}: missing value")
                dropped += 1
                continue
            values = []
            for name, c in zip(names, cells):
                try:
                    v = float(c)
                except ValueError:
                    raise DataError(
                        f"line {line_no}: non-numeric value {c!r} in column {name!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"line {line_no}: non-finite value in column {name!r}")
                values.append(v)
            rows.append(values)
            labels.append(_parse_label(label_cell, mapping, K, line_no))

    if dropped:
        logger.warning("dropped %d rows with missing values from %s", dropped, path)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    category_names = None
    if mapping is not None:
        inverse = {v: k for k, v in mapping.items()}
        if all(k in inverse for k in range(1, K + 1)):
            category_names = tuple(inverse[k] for k in range(1, K + 1))
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return Dataset(features, tuple(names), np.array(labels), K, category_names)


def _parse_label(cell: str, mapping, K: int, line_no: int) -> int:
    if mapping is not None and cell in mapping:
        k = mapping[cell]
    else:
        try:
            f = float(cell)
        except ValueError:
            raise DataError(f"line {line_no}: unknown label {cell!r}") from None
        if f != int(f):
            raise DataError(f"line {line_no}: label {cell!r} is not an integer")
        k = int(f)
    if not 1 <= k <= K:
        raise DataError(f"line {line_no}: label out of range: {k} not in 1..{K}")
    return k


def write_csv(ds: Dataset, path, label_column: str = "y"):
    """Write ``ds`` as CSV; floats use repr so a reload is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + [label_column])
        for row, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(y)])


__all__ = [
    "Dataset", "DesignSpec", "ScalingParams", "standardize", "split", "split_indices",
    "design_matrix", "load_csv", "write_csv",
]
