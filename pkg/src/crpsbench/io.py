"""CSV readers and writers for datasets, sample panels and reports.

Floats are written with 17 significant digits, enough to round-trip any
double, so reruns of a seeded command produce byte-identical files.
Readers raise :class:`InputError` with the offending line number.

Formats
-------
dataset  ``t,y,split`` with ``split`` in {train, test}
panel    ``t,y_obs,s_1,...,s_M``; the ``t`` column is optional
support  ``index,value,weight``
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Iterable, List, Optional, Sequence, TextIO

import numpy as np

from .forecast import SamplePanel, TimeSeriesDataset


class InputError(ValueError):
    """Malformed input file."""


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_table(stream: TextIO, header: Sequence[str], rows: Iterable[Sequence], fmt: str = "csv") -> None:
    """Write ``rows`` as CSV (fixed float format) or as a JSON list of objects."""
    if fmt == "json":
        records = []
        for row in rows:
            rec = {}
            for k, v in zip(header, row):
                if isinstance(v, (np.integer,)):
                    v = int(v)
                elif isinstance(v, (float, np.floating)):
                    v = float(v)
                    v = v if math.isfinite(v) else None
                rec[k] = v
            records.append(rec)
        json.dump(records, stream, indent=1)
        stream.write("\n")
        return
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])


def table_string(header, rows, fmt="csv") -> str:
    buf = io.StringIO()
    write_table(buf, header, rows, fmt)
    return buf.getvalue()


def _read_rows(stream: TextIO, source: str):
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise InputError(f"{source}: file is empty") from None
    except csv.Error as exc:
        raise InputError(f"{source}:1: {exc}") from None
    header = [h.strip() for h in header]
    rows = []
    try:
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((reader.line_num, row))
    except csv.Error as exc:
        raise InputError(f"{source}:{reader.line_num}: {exc}") from None
    return header, rows


def _float(cell: str, line: int, column: str, source: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise InputError(f"{source}:{line}: column {column!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"{source}:{line}: column {column!r}: value {cell!r} is not finite")
    return v


def _require(header, name, source):
    if name not in header:
        raise InputError(f"{source}:1: missing required column {name!r} (found: {', '.join(header)})")
    return header.index(name)


def _check_width(row, header, line, source):
    if len(row) != len(header):
        raise InputError(f"{source}:{line}: expected {len(header)} fields, found {len(row)}")


def read_dataset(stream: TextIO, source: str = "<dataset>") -> TimeSeriesDataset:
    header, rows = _read_rows(stream, source)
    it, iy, isplit = (_require(header, c, source) for c in ("t", "y", "split"))
    t, y, train = [], [], []
    for line, row in rows:
        _check_width(row, header, line, source)
        t.append(_float(row[it], line, "t", source))
        y.append(_float(row[iy], line, "y", source))
        split = row[isplit].strip().lower()
        if split not in ("train", "test"):
            raise InputError(f"{source}:{line}: column 'split' must be 'train' or 'test', got {row[isplit]!r}")
        train.append(split == "train")
    try:
        return TimeSeriesDataset(np.array(t), np.array(y), np.array(train, dtype=bool))
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from None


def write_dataset(stream: TextIO, ds: TimeSeriesDataset, fmt: str = "csv") -> None:
    rows = [(t, y, "train" if tr else "test") for t, y, tr in zip(ds.t, ds.y, ds.train)]
    write_table(stream, ("t", "y", "split"), rows, fmt)


def _sample_columns(header: List[str]) -> List[int]:
    cols = [i for i, h in enumerate(header) if h.startswith("s_")]
    return sorted(cols, key=lambda i: int(header[i][2:]) if header[i][2:].isdigit() else 10**9)


def read_panel(stream: TextIO, source: str = "<panel>", y_column: str = "y_obs") -> SamplePanel:
    """Parse a ``t,y_obs,s_1..s_M`` panel; ``t`` may be absent."""
    header, rows = _read_rows(stream, source)
    iy = _require(header, y_column, source)
    it = header.index("t") if "t" in header else None
    scols = _sample_columns(header)
    if not scols:
        raise InputError(f"{source}:1: no sample columns (expected s_1, s_2, ...)")
    if not rows:
        raise InputError(f"{source}: panel has no data rows")
    t, y, draws = [], [], []
    for line, row in rows:
        _check_width(row, header, line, source)
        if it is not None:
            t.append(_float(row[it], line, "t", source))
        y.append(_float(row[iy], line, y_column, source))
        draws.append([_float(row[j], line, header[j], source) for j in scols])
    try:
        return SamplePanel(np.array(draws), np.array(y), t=np.array(t) if it is not None else None)
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from None


def write_panel(stream: TextIO, panel: SamplePanel, fmt: str = "csv") -> None:
    header = ["t", "y_obs"] + [f"s_{i}" for i in range(1, panel.M + 1)]
    rows = [(t, y, *d) for t, y, d in zip(panel.t, panel.observations, panel.draws)]
    write_table(stream, header, rows, fmt)


def read_samples(stream: TextIO, source: str = "<samples>", column: Optional[str] = None) -> np.ndarray:
    """One sample row for ``quantize``.

    Accepts a single-column file (header ``value`` or any name) or a panel
    file with one row; ``column`` selects a column of a multi-column file.
    """
    header, rows = _read_rows(stream, source)
    if not rows:
        raise InputError(f"{source}: no data rows")
    scols = _sample_columns(header)
    if column is None and scols and len(rows) == 1:
        line, row = rows[0]
        _check_width(row, header, line, source)
        return np.array([_float(row[j], line, header[j], source) for j in scols])
    if column is None:
        if len(header) != 1:
            raise InputError(f"{source}:1: expected one column or a one-row panel; pass --column to choose")
        idx = 0
    else:
        idx = _require(header, column, source)
    out = []
    for line, row in rows:
        _check_width(row, header, line, source)
        out.append(_float(row[idx], line, header[idx], source))
    return np.array(out)
