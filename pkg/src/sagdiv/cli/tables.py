"""CSV ingestion and emission."""
from __future__ import annotations

import csv
import math
import re

import numpy as np

from ..core import Dataset
from ..errors import IngestionError

_COLUMN = re.compile(r"^(x|z)_(\d+)$")


def fmt(value) -> str:
    """17 significant digits, empty for missing values."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    return format(value, ".17g")


def _read(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise IngestionError(f"malformed CSV: {exc}") from exc
    if not rows:
        raise IngestionError("file is empty (no header)")
    return [h.strip() for h in rows[0]], rows[1:]


def _block(header, prefix):
    idx = {}
    for col, name in enumerate(header):
        m = _COLUMN.match(name)
        if m and m.group(1) == prefix:
            idx[int(m.group(2))] = col
    if sorted(idx) != list(range(len(idx))):
        raise IngestionError(f"{prefix}_* columns must be numbered 0..d-1, got {sorted(idx)}", row=1)
    return [idx[i] for i in range(len(idx))]


def _numeric(header, rows):
    out = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        line = i + 2  # 1-based, after the header
        if len(row) != len(header):
            raise IngestionError(f"expected {len(header)} fields, got {len(row)}", row=line)
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise IngestionError(f"non-numeric value {cell!r} in column {header[j]}", row=line) from None
            if not math.isfinite(out[i, j]):
                raise IngestionError(f"non-finite value in column {header[j]}", row=line)
    return out


def read_dataset(path) -> Dataset:
    """Read ``x_0..x_{d-1}, z_0..z_{q-1}, y``; row numbers in errors count the header as row 1."""
    header, rows = _read(path)
    xs, zs = _block(header, "x"), _block(header, "z")
    if not xs or not zs or "y" not in header:
        raise IngestionError("header needs x_0.., z_0.. and y columns", row=1)
    if not rows:
        raise IngestionError("no data rows")
    values = _numeric(header, rows)
    return Dataset(values[:, xs], values[:, zs], values[:, header.index("y")])


def read_covariates(path) -> np.ndarray:
    """Read the ``x_*`` columns; a header-only file gives a (0, d) array."""
    header, rows = _read(path)
    xs = _block(header, "x")
    if not xs:
        raise IngestionError("header needs x_0.. columns", row=1)
    return _numeric(header, rows)[:, xs].reshape(len(rows), len(xs))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
