"""Loading defect datasets, building design matrices and histogram bins."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyFile,
    MissingColumn,
    NonIntegerBugs,
    NonNumericCell,
    UnknownCovariate,
    ZeroCovariatesForNonZIFamily,
    DataError,
)

FAMILIES = ("linear", "poisson", "negbin", "zip", "zinb")
ZERO_INFLATED = ("zip", "zinb")
RESPONSE = "bugs"
# Columns recognised as the per-module identifier, first match wins.
ID_COLUMNS = ("id", "module_id", "classname", "name")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of module metrics and observed bug counts.

    ``metrics`` keeps the file's column order. ``id_column`` is the name of
    the identifier column in the source file, or None when ids were
    generated from row numbers.
    """

    module_ids: tuple[str, ...]
    metrics: Mapping[str, np.ndarray]
    bugs: np.ndarray
    id_column: str | None = "id"

    def __post_init__(self):
        n = len(self.module_ids)
        if n < 1:
            raise EmptyFile("dataset has no rows")
        bugs = np.asarray(self.bugs)
        if bugs.shape != (n,):
            raise DataError("bugs column length does not match row count")
        if not np.issubdtype(bugs.dtype, np.integer):
            if not np.all(np.isfinite(bugs)) or np.any(bugs != np.round(bugs)):
                raise NonIntegerBugs("bugs must be integers")
        if np.any(bugs < 0):
            raise NonIntegerBugs("bugs must be non-negative")
        metrics = {}
        for name, col in self.metrics.items():
            if name == RESPONSE or name == self.id_column:
                raise DataError(f"duplicate column name {name!r}")
            col = np.array(col, dtype=float)
            if col.shape != (n,):
                raise DataError(f"column {name!r} has {col.size} entries, expected {n}")
            if not np.all(np.isfinite(col)):
                raise NonNumericCell(f"column {name!r} has non-finite entries")
            metrics[name] = _frozen(col)
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "bugs", _frozen(np.array(bugs, dtype=np.int64)))
        object.__setattr__(self, "module_ids", tuple(str(m) for m in self.module_ids))

    @property
    def n(self) -> int:
        return len(self.module_ids)

    @property
    def columns(self) -> list[str]:
        return list(self.metrics)

    def column(self, name: str) -> np.ndarray:
        if name == RESPONSE:
            return self.bugs
        try:
            return self.metrics[name]
        except KeyError:
            raise UnknownCovariate(f"unknown covariate {name!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.module_ids == other.module_ids
            and list(self.metrics) == list(other.metrics)
            and all(np.array_equal(self.metrics[k], other.metrics[k]) for k in self.metrics)
            and np.array_equal(self.bugs, other.bugs)
        )

    __hash__ = None


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus covariates for the count and zero components."""

    family: str
    count_covariates: tuple[str, ...] = ()
    zero_covariates: tuple[str, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        count = tuple(self.count_covariates)
        zero = tuple(self.zero_covariates)
        for label, cov in (("count", count), ("zero", zero)):
            dup = [c for c, k in Counter(cov).items() if k > 1]
            if dup:
                raise DataError(f"duplicate {label} covariates: {dup}")
        if zero and self.family not in ZERO_INFLATED:
            raise ZeroCovariatesForNonZIFamily(
                f"zero covariates are only valid for zip/zinb, not {self.family}"
            )
        object.__setattr__(self, "count_covariates", count)
        object.__setattr__(self, "zero_covariates", zero)

    @property
    def zero_inflated(self) -> bool:
        return self.family in ZERO_INFLATED

    def describe(self) -> str:
        s = f"{self.family}(count: {','.join(self.count_covariates) or '1'}"
        if self.zero_inflated:
            s += f"; zero: {','.join(self.zero_covariates) or '1'}"
        return s + ")"


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    spec: ModelSpec
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray | None = None
    count_names: tuple[str, ...] = field(default=())
    zero_names: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.y.shape[0]


def _parse_float(text: str, column: str, line: int) -> float:
    text = text.strip()
    if text == "":
        raise NonNumericCell(f"line {line}: missing value in column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(
            f"line {line}: cannot parse {text!r} in column {column!r}"
        ) from None
    if not math.isfinite(value):
        raise NonNumericCell(f"line {line}: non-finite value {text!r} in column {column!r}")
    return value


def _parse_bug(text: str, line: int) -> int:
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        raise NonIntegerBugs(f"line {line}: bugs value {text!r} is not a number") from None
    if not math.isfinite(value) or value < 0 or value != int(value):
        raise NonIntegerBugs(f"line {line}: bugs value {text!r} is not a non-negative integer")
    return int(value)


def load_csv(path, schema: Iterable[str] | None = None, delimiter: str = ",") -> Dataset:
    """Read a flat per-module CSV export.

    Parameters
    ----------
    path : str or Path
        UTF-8 file with a header row.
    schema : iterable of str, optional
        Column names that must be present. ``bugs`` is always required.
    delimiter : str
        Field separator.

    Every column other than the identifier must be numeric; extra columns
    beyond ``schema`` are kept. Rows with an empty cell are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    required = [RESPONSE] + [c for c in (schema or ()) if c != RESPONSE]
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
    if not rows:
        raise EmptyFile(f"{path}: header present but no data rows")

    id_column = next((c for c in ID_COLUMNS if c in header), None)
    metric_names = [c for c in header if c not in (RESPONSE, id_column)]
    idx = {name: i for i, name in enumerate(header)}

    ids, bugs = [], []
    cols = {name: [] for name in metric_names}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise NonNumericCell(
                f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
            )
        ids.append(row[idx[id_column]].strip() if id_column else str(lineno - 1))
        bugs.append(_parse_bug(row[idx[RESPONSE]], lineno))
        for name in metric_names:
            cols[name].append(_parse_float(row[idx[name]], name, lineno))

    return Dataset(
        module_ids=tuple(ids),
        metrics={k: np.array(v, dtype=float) for k, v in cols.items()},
        bugs=np.array(bugs, dtype=np.int64),
        id_column=id_column,
    )


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(d: Dataset) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    id_name = d.id_column or "id"
    w.writerow([id_name, *d.metrics, RESPONSE])
    for j in range(d.n):
        w.writerow([d.module_ids[j], *(repr(float(d.metrics[k][j])) for k in d.metrics), int(d.bugs[j])])
    return buf.getvalue()


def write_csv(d: Dataset, path) -> None:
    atomic_write_text(path, dataset_to_csv(d))


def build_design(d: Dataset, spec: ModelSpec) -> DesignMatrices:
    """Assemble X (and Z for zero-inflated families) with a leading intercept."""
    for name in spec.count_covariates + spec.zero_covariates:
        if name not in d.metrics:
            raise UnknownCovariate(f"unknown covariate {name!r}")
    n = d.n
    X = np.column_stack([np.ones(n)] + [d.metrics[c] for c in spec.count_covariates])
    Z = None
    if spec.zero_inflated:
        Z = _frozen(np.column_stack([np.ones(n)] + [d.metrics[c] for c in spec.zero_covariates]))
    return DesignMatrices(
        spec=spec,
        X=_frozen(X),
        y=d.bugs,
        Z=Z,
        count_names=("intercept",) + spec.count_covariates,
        zero_names=("intercept",) + spec.zero_covariates if spec.zero_inflated else (),
    )


def histogram(y: Sequence[int], drop_zeros: bool = False) -> list[tuple[int, int]]:
    """Count modules per observed bug value, ascending by value."""
    counts = Counter(int(v) for v in y)
    if drop_zeros:
        counts.pop(0, None)
    return sorted(counts.items())


def histogram_csv(bins: list[tuple[int, int]]) -> str:
    return "value,count\n" + "".join(f"{v},{c}\n" for v, c in bins)


def histogram_text(bins: list[tuple[int, int]], width: int = 50) -> str:
    if not bins:
        return "(no data)\n"
    top = max(c for _, c in bins)
    vw = max(len(str(v)) for v, _ in bins)
    cw = max(len(str(c)) for _, c in bins)
    lines = []
    for v, c in bins:
        bar = "#" * max(1, round(width * c / top))
        lines.append(f"{v:>{vw}} | {c:>{cw}} {bar}")
    return "\n".join(lines) + "\n"
