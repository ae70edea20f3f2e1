"""CSV ingestion and the preprocessing steps of the application pipeline."""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import (
    ConfigError,
    ConstantColumn,
    InsufficientRows,
    LeadingMissing,
    ParseError,
    RaggedRows,
)

MISSING = ("", "NA")


@dataclass(frozen=True)
class Dataset:
    """Rectangular numeric table; missing values are NaN."""

    columns: list
    values: np.ndarray
    index: list | None = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError(f"{len(self.columns)} columns for values of shape {self.values.shape}")
        if self.index is not None and len(self.index) != self.values.shape[0]:
            raise ValueError("row labels do not match the number of rows")

    @property
    def n_rows(self):
        return self.values.shape[0]

    def column(self, name):
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise ConfigError(f"column {name!r} not found") from None

    def select(self, names):
        idx = [self._position(c) for c in names]
        return replace(self, columns=list(names), values=self.values[:, idx])

    def drop(self, names):
        names = set(names)
        return self.select([c for c in self.columns if c not in names])

    def rows(self, start, stop=None):
        index = None if self.index is None else self.index[start:stop]
        return replace(self, values=self.values[start:stop], index=index)

    def _position(self, name):
        try:
            return self.columns.index(name)
        except ValueError:
            raise ConfigError(f"column {name!r} not found") from None


def read_csv(path, index_column=None):
    """Read a UTF-8 CSV with a header row; empty cells and ``NA`` are missing.

    Numbers are parsed with ``float`` (dot decimal, independent of locale).  If
    ``index_column`` names a column it is kept as string row labels.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=1) from None
        if len(set(header)) != len(header):
            raise ParseError(f"{path}: duplicate column names in header", row=1)
        label_pos = None
        if index_column is not None:
            if index_column not in header:
                raise ConfigError(f"index column {index_column!r} not in header")
            label_pos = header.index(index_column)
        rows, labels = [], []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise RaggedRows(
                    f"{path}: row {lineno} has {len(record)} fields, expected {len(header)}",
                    row=lineno,
                )
            values = []
            for pos, cell in enumerate(record):
                if pos == label_pos:
                    labels.append(cell.strip())
                    continue
                values.append(_parse_cell(cell, path, lineno, header[pos]))
            rows.append(values)
    columns = [h for pos, h in enumerate(header) if pos != label_pos]
    values = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return Dataset(columns, values, labels if label_pos is not None else None)


def _parse_cell(cell, path, lineno, column):
    text = cell.strip()
    if text in MISSING:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"{path}: row {lineno}, column {column!r}: cannot parse {cell!r} as a number",
            row=lineno, column=column,
        ) from None
    if not math.isfinite(value):
        raise ParseError(
            f"{path}: row {lineno}, column {column!r}: non-finite value {cell!r}",
            row=lineno, column=column,
        )
    return value


def write_csv_rows(header, rows):
    """Render rows as CSV text with ``\\n`` line endings."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def fill_missing(ds: Dataset) -> Dataset:
    """Replace each missing value by the most recent earlier value in its column."""
    values = ds.values.copy()
    for j, name in enumerate(ds.columns):
        col = values[:, j]
        if col.size and math.isnan(col[0]):
            raise LeadingMissing(f"column {name!r} starts with a missing value")
        for i in range(1, col.size):
            if math.isnan(col[i]):
                col[i] = col[i - 1]
    return replace(ds, values=values)


def standardize(ds: Dataset):
    """Center each column and scale it to unit standard deviation (divisor n).

    Returns ``(standardized, means, sds)``.
    """
    means = ds.values.mean(axis=0)
    centered = ds.values - means
    sds = np.sqrt((centered**2).mean(axis=0))
    const = np.flatnonzero(~(sds > 1e-12 * np.maximum(1.0, np.abs(means))))
    if const.size:
        raise ConstantColumn(f"column {ds.columns[const[0]]!r} is constant")
    return replace(ds, values=centered / sds), means, sds


def unstandardize(ds: Dataset, means, sds) -> Dataset:
    return replace(ds, values=ds.values * sds + means)


def build_lags(ds: Dataset, column, lags) -> Dataset:
    """Append ``{column}_lag1 .. _lag{lags}`` and drop the first ``lags`` rows."""
    lags = int(lags)
    if lags < 1:
        raise ConfigError("lags must be at least 1")
    if lags >= ds.n_rows:
        raise InsufficientRows(f"{lags} lags need more than {ds.n_rows} rows")
    series = ds.column(column)
    n = ds.n_rows
    lagged = [series[lags - l:n - l] for l in range(1, lags + 1)]
    values = np.column_stack([ds.values[lags:]] + lagged)
    columns = list(ds.columns) + [f"{column}_lag{l}" for l in range(1, lags + 1)]
    index = None if ds.index is None else ds.index[lags:]
    return Dataset(columns, values, index)


def _tcode(x, code):
    """FRED-MD/QD transformation codes 1-7; the first rows become NaN."""
    out = np.full_like(x, np.nan)
    if code in (4, 5, 6):
        if np.any(x[~np.isnan(x)] <= 0):
            raise ConfigError("log transform of a nonpositive series")
        x = np.log(x)
    if code in (1, 4):
        out[:] = x
    elif code in (2, 5):
        out[1:] = x[1:] - x[:-1]
    elif code in (3, 6):
        out[2:] = x[2:] - 2 * x[1:-1] + x[:-2]
    elif code == 7:
        growth = np.full_like(x, np.nan)
        growth[1:] = x[1:] / x[:-1] - 1.0
        out[1:] = growth[1:] - growth[:-1]
    else:
        raise ConfigError(f"unknown transformation code {code}")
    return out


TCODE_LOSS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


def apply_transforms(ds: Dataset, codes) -> Dataset:
    """Apply per-column stationarity transformations and drop the rows they consume.

    ``codes`` maps column name to an integer code; unlisted columns are left as
    they are.
    """
    if not codes:
        return ds
    values = ds.values.copy()
    loss = 0
    for name, code in codes.items():
        j = ds._position(name)
        code = int(code)
        if code not in TCODE_LOSS:
            raise ConfigError(f"unknown transformation code {code} for column {name!r}")
        values[:, j] = _tcode(values[:, j], code)
        loss = max(loss, TCODE_LOSS[code])
    return replace(ds, values=values).rows(loss)
