"""Typed columnar dataset with explicit missingness and CSV round-trip.

A :class:`Dataset` is a fixed set of named columns, each either continuous
(float64) or categorical (int32 level indices into a label table), plus a
per-column boolean missing mask. Datasets are immutable after construction;
all edits go through methods that return new objects, so a dataset can be
shared freely across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ColumnKind(Enum):
    CONTINUOUS = "cont"
    CATEGORICAL = "cat"


@dataclass(frozen=True)
class ColumnSpec:
    """Name, kind, and (for categorical columns) the ordered level labels."""

    name: str
    kind: ColumnKind
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is ColumnKind.CATEGORICAL:
            if not self.levels:
                raise ValueError(f"categorical column {self.name!r} needs at least one level")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"categorical column {self.name!r} has duplicate levels")
        elif self.levels:
            raise ValueError(f"continuous column {self.name!r} must not declare levels")

    @property
    def is_continuous(self) -> bool:
        return self.kind is ColumnKind.CONTINUOUS


class CsvParseError(ValueError):
    """CSV cell or header that cannot be interpreted under the column specs."""


class Dataset:
    """Immutable columnar table with per-cell missingness.

    Continuous columns hold float64 values (NaN at missing cells);
    categorical columns hold int32 level indices (-1 at missing cells).
    The missing mask is authoritative; the sentinel cell values are never
    read through the public accessors.
    """

    __slots__ = ("columns", "_values", "_missing", "_index")

    def __init__(
        self,
        columns: Sequence[ColumnSpec],
        values: Sequence[np.ndarray],
        missing: Sequence[np.ndarray] | None = None,
    ):
        columns = tuple(columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        if len(values) != len(columns):
            raise ValueError("one value vector per column required")

        n_rows = len(values[0]) if values else 0
        vals: list[np.ndarray] = []
        miss: list[np.ndarray] = []
        for j, spec in enumerate(columns):
            m = (
                np.zeros(n_rows, dtype=bool)
                if missing is None
                else np.asarray(missing[j], dtype=bool).copy()
            )
            if len(values[j]) != n_rows or len(m) != n_rows:
                raise ValueError(f"column {spec.name!r} has inconsistent length")
            if spec.is_continuous:
                v = np.asarray(values[j], dtype=np.float64).copy()
                m |= np.isnan(v)
                v[m] = np.nan
            else:
                arr = np.asarray(values[j])
                if arr.dtype.kind == "f":
                    m |= np.isnan(arr)
                    arr = np.where(np.isnan(arr), -1.0, arr)
                v = arr.astype(np.int32)
                m |= v < 0
                v[m] = -1
                if v.size and v.max(initial=-1) >= len(spec.levels):
                    raise ValueError(
                        f"column {spec.name!r} has level index out of range"
                    )
            v.setflags(write=False)
            m.setflags(write=False)
            vals.append(v)
            miss.append(m)
        self.columns = columns
        self._values = tuple(vals)
        self._missing = tuple(miss)
        self._index = {c.name: j for j, c in enumerate(columns)}

    # -- basic accessors ----------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self._values[0]) if self._values else 0

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def spec(self, name: str) -> ColumnSpec:
        return self.columns[self.col_index(name)]

    def col_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        """Raw value vector (read-only). Missing cells hold NaN / -1 sentinels."""
        return self._values[self.col_index(name)]

    def missing(self, name: str) -> np.ndarray:
        """Boolean missing mask (read-only)."""
        return self._missing[self.col_index(name)]

    def cell(self, row: int, name: str):
        """Value at (row, column): float, level label, or None when missing."""
        j = self.col_index(name)
        if self._missing[j][row]:
            return None
        if self.columns[j].is_continuous:
            return float(self._values[j][row])
        return self.columns[j].levels[self._values[j][row]]

    def n_missing(self) -> int:
        return int(sum(m.sum() for m in self._missing))

    def is_complete(self) -> bool:
        return self.n_missing() == 0

    def incomplete_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c, m in zip(self.columns, self._missing) if m.any())

    def complete_case_mask(self) -> np.ndarray:
        """True for rows with no missing cell in any column."""
        mask = np.ones(self.n_rows, dtype=bool)
        for m in self._missing:
            mask &= ~m
        return mask

    # -- derived datasets ---------------------------------------------------

    def take(self, rows) -> "Dataset":
        """New dataset restricted to the given row indices or boolean mask."""
        rows = np.asarray(rows)
        return Dataset(
            self.columns,
            [v[rows] for v in self._values],
            [m[rows] for m in self._missing],
        )

    def with_values(
        self, name: str, values: np.ndarray, missing: np.ndarray | None = None
    ) -> "Dataset":
        """New dataset with one column's values (and mask) replaced."""
        j = self.col_index(name)
        vals = list(self._values)
        miss = list(self._missing)
        vals[j] = np.asarray(values)
        miss[j] = (
            np.zeros(self.n_rows, dtype=bool) if missing is None else np.asarray(missing)
        )
        return Dataset(self.columns, vals, miss)

    def with_missing_mask(self, name: str, missing: np.ndarray) -> "Dataset":
        """New dataset with one column's missing mask replaced (values kept)."""
        j = self.col_index(name)
        miss = list(self._missing)
        miss[j] = np.asarray(missing, dtype=bool)
        return Dataset(self.columns, list(self._values), miss)


# -- CSV interface ----------------------------------------------------------


def read_csv(
    path: str | Path, specs: Sequence[ColumnSpec], missing_token: str = "NA"
) -> Dataset:
    """Read an RFC-4180-style CSV under the given column specs.

    The header row must name the columns of ``specs`` exactly. Cells equal to
    ``missing_token`` or the empty string are flagged missing. Continuous
    cells must parse as decimal numbers, categorical cells must match a
    declared level; violations raise :class:`CsvParseError` naming the
    1-based data row and the column.
    """
    specs = tuple(specs)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, expected a header row") from None
        expected = [s.name for s in specs]
        if header != expected:
            raise CsvParseError(
                f"{path}: header mismatch: expected {expected}, found {header}"
            )
        raw_rows = [row for row in reader]

    n = len(raw_rows)
    values: list[np.ndarray] = []
    missing: list[np.ndarray] = []
    for spec in specs:
        if spec.is_continuous:
            values.append(np.full(n, np.nan))
        else:
            values.append(np.full(n, -1, dtype=np.int32))
        missing.append(np.zeros(n, dtype=bool))

    level_maps = [
        {lab: i for i, lab in enumerate(s.levels)} if not s.is_continuous else None
        for s in specs
    ]
    for r, row in enumerate(raw_rows):
        if len(row) != len(specs):
            raise CsvParseError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {len(specs)}"
            )
        for j, (spec, cell) in enumerate(zip(specs, row)):
            if cell == missing_token or cell == "":
                missing[j][r] = True
                continue
            if spec.is_continuous:
                try:
                    values[j][r] = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {r + 1}, column {spec.name!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            else:
                idx = level_maps[j].get(cell)
                if idx is None:
                    raise CsvParseError(
                        f"{path}: row {r + 1}, column {spec.name!r}: "
                        f"unknown categorical level {cell!r}"
                    )
                values[j][r] = idx
    return Dataset(specs, values, missing)


def write_csv(ds: Dataset, path: str | Path, missing_token: str = "NA") -> None:
    """Write a dataset as CSV; round-trips with :func:`read_csv`.

    Continuous values are written with shortest-exact float repr, so a
    read-back reproduces them bit-exactly; categorical cells are written
    as their level labels.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.names)
        cols = [ds.column(name) for name in ds.names]
        miss = [ds.missing(name) for name in ds.names]
        is_cont = [spec.is_continuous for spec in ds.columns]
        levels = [spec.levels for spec in ds.columns]
        for r in range(ds.n_rows):
            row = []
            for j in range(len(cols)):
                if miss[j][r]:
                    row.append(missing_token)
                elif is_cont[j]:
                    row.append(repr(float(cols[j][r])))
                else:
                    row.append(levels[j][cols[j][r]])
            writer.writerow(row)


def infer_specs(
    path: str | Path, missing_token: str = "NA"
) -> tuple[ColumnSpec, ...]:
    """Infer column specs from a CSV: all-numeric columns become continuous,
    anything else categorical with levels = sorted distinct labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, expected a header row") from None
        raw_rows = list(reader)

    specs = []
    for j, name in enumerate(header):
        cells = [
            row[j]
            for row in raw_rows
            if j < len(row) and row[j] not in ("", missing_token)
        ]
        numeric = True
        for cell in cells:
            try:
                float(cell)
            except ValueError:
                numeric = False
                break
        if numeric:
            specs.append(ColumnSpec(name, ColumnKind.CONTINUOUS))
        else:
            specs.append(
                ColumnSpec(name, ColumnKind.CATEGORICAL, tuple(sorted(set(cells))))
            )
    return tuple(specs)


# -- column transforms and matrix views ---------------------------------------


def add_product_column(ds: Dataset, a: str, b: str, out: str) -> Dataset:
    """Append ``out = a * b`` (elementwise); missing wherever a or b is missing."""
    for name in (a, b):
        if not ds.spec(name).is_continuous:
            raise ValueError(f"product input {name!r} must be continuous")
    if out in ds.names:
        raise ValueError(f"column {out!r} already exists")
    va, vb = ds.column(a), ds.column(b)
    miss = ds.missing(a) | ds.missing(b)
    prod = np.where(miss, np.nan, va * vb)
    return Dataset(
        ds.columns + (ColumnSpec(out, ColumnKind.CONTINUOUS),),
        list(ds._values) + [prod],
        list(ds._missing) + [miss],
    )


def feature_matrix(
    ds: Dataset, columns: Sequence[str]
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Dense float64 matrix over the given columns plus per-feature level counts.

    Categorical columns contribute their level indices as floats; the returned
    ``levels`` tuple holds the number of levels per feature (0 = continuous).
    All requested columns must be complete.
    """
    n = ds.n_rows
    X = np.empty((n, len(columns)), dtype=np.float64)
    levels = []
    for j, name in enumerate(columns):
        if ds.missing(name).any():
            raise ValueError(f"column {name!r} has missing cells")
        spec = ds.spec(name)
        X[:, j] = ds.column(name)
        levels.append(0 if spec.is_continuous else len(spec.levels))
    return X, tuple(levels)
