"""File formats: fills CSV (one metaorder per row), bucketed-curve CSV and
JSON summaries.

Floats are written with ``repr`` (shortest round-trip decimal), so reading a
written file reproduces every field bit for bit.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from typing import IO, Iterable, Iterator

import numpy as np

from .estimator import BucketGrid, BucketStats
from .simulator import MetaorderRecord, Panel

FILLS_COLUMNS = ("order_id", "sign", "quantity", "duration_days", "start_logprice",
                 "end_logprice", "sigma", "daily_volume")
CURVES_COLUMNS = ("q_over_v_bin_center", "t_bucket_days", "n_obs", "mean_impact",
                  "var_price_change", "std_err_mean", "q_over_v_lo", "q_over_v_hi")
_POSITIVE = ("quantity", "duration_days", "sigma", "daily_volume")
_ROWS_PER_BLOCK = 1 << 16


class SchemaError(ValueError):
    pass


class RowError(ValueError):
    def __init__(self, row: int, column: str, reason: str):
        super().__init__(f"row {row}, {column}: {reason}")
        self.row = row
        self.column = column


class SinkWriteError(OSError):
    def __init__(self, cause: Exception, bytes_written: int):
        super().__init__(f"write failed after {bytes_written} bytes: {cause}")
        self.bytes_written = bytes_written


def _text(source) -> IO[str]:
    if isinstance(source, (io.TextIOBase,)):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _parse_sign(text: str, row: int) -> int:
    s = text.strip()
    if s in ("+1", "1"):
        return 1
    if s == "-1":
        return -1
    raise RowError(row, "sign", f"must be +1 or -1, got {text!r}")


def _parse_int(text: str, row: int, column: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise RowError(row, column, f"not an integer: {text!r}") from None


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise RowError(row, column, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise RowError(row, column, f"must be finite, got {text!r}")
    if column in _POSITIVE and value <= 0:
        raise RowError(row, column, "must be > 0")
    return value


def _parse_row(fields: list[str], row: int) -> tuple:
    if len(fields) != len(FILLS_COLUMNS):
        raise RowError(row, "*", f"expected {len(FILLS_COLUMNS)} fields, got {len(fields)}")
    return (
        _parse_int(fields[0], row, "order_id"),
        _parse_sign(fields[1], row),
        *(_parse_float(f, row, c) for f, c in zip(fields[2:], FILLS_COLUMNS[2:])),
    )


def _header(text: IO[str]) -> None:
    line = text.readline()
    header = next(csv.reader([line]), None) if line else None
    if header is None or tuple(h.strip() for h in header) != FILLS_COLUMNS:
        raise SchemaError(f"fills header must be {','.join(FILLS_COLUMNS)}; got {header!r}")


def _raw_blocks(source, rows_per_block: int) -> Iterator[tuple[int, list[list[str]]]]:
    """(file row number of the first line, split lines) blocks after the header.

    Rows are counted as physical lines; the format never quotes fields.
    """
    text = _text(source)
    _header(text)
    row = 2
    while True:
        lines = list(itertools.islice(text, rows_per_block))
        if not lines:
            return
        yield row, list(csv.reader(lines))
        row += len(lines)


def read_fills(source) -> Iterator[MetaorderRecord]:
    """Yield validated records in file order. ``source`` is a binary or text stream."""
    for first, rows in _raw_blocks(source, 4096):
        for k, fields in enumerate(rows):
            if fields:
                yield MetaorderRecord(*_parse_row(fields, first + k))


def read_fills_blocks(source, rows_per_block: int = _ROWS_PER_BLOCK) -> Iterator[Panel]:
    """Same validation as :func:`read_fills`, yielding column blocks.

    Seekable binary sources go through the pandas C parser first; if it
    rejects anything, parsing restarts in pure Python from where the fast
    path stopped, which either accepts the rows or raises the row error.
    """
    fast = _seekable_binary(source)
    if fast:
        start = source.tell()
        emitted = 0
        try:
            for block in _pandas_blocks(source, rows_per_block):
                emitted += len(block)
                yield block
            return
        except _FastPathRejected:
            source.seek(start)
    else:
        emitted = 0
    skip = emitted
    for first, rows in _raw_blocks(source, rows_per_block):
        block = _parse_block(rows, first)
        if skip >= len(block):
            skip -= len(block)
            continue
        if skip:
            block = Panel(**{f: getattr(block, f)[skip:] for f in Panel.FIELDS})
            skip = 0
        if len(block):
            yield block


class _FastPathRejected(Exception):
    pass


def _seekable_binary(source) -> bool:
    try:
        return not isinstance(source, io.TextIOBase) and source.seekable()
    except (AttributeError, ValueError):
        return False


class _Borrowed:
    """Read-only view that pandas cannot close."""

    def __init__(self, stream):
        self._stream = stream

    def read(self, size: int = -1):
        return self._stream.read(size)

    def __iter__(self):
        return iter(self._stream)


def _pandas_blocks(source, rows_per_block: int) -> Iterator[Panel]:
    import pandas as pd

    header = source.readline().decode("utf-8")
    if tuple(h.strip() for h in next(csv.reader([header]), [])) != FILLS_COLUMNS:
        raise SchemaError(f"fills header must be {','.join(FILLS_COLUMNS)}; got {header.strip()!r}")
    dtypes = {c: float for c in FILLS_COLUMNS}
    dtypes.update(order_id=np.int64, sign=str)
    try:
        reader = pd.read_csv(_Borrowed(source), header=None, names=list(FILLS_COLUMNS), dtype=dtypes,
                             engine="c", float_precision="round_trip", keep_default_na=False,
                             na_filter=False, chunksize=rows_per_block)
        for df in reader:
            if df.shape[1] != len(FILLS_COLUMNS):
                raise _FastPathRejected
            sign_text = df["sign"].to_numpy(dtype=str)
            plus = (sign_text == "+1") | (sign_text == "1")
            if not np.all(plus | (sign_text == "-1")):
                raise _FastPathRejected
            floats = {c: df[c].to_numpy(dtype=float) for c in FILLS_COLUMNS[2:]}
            for c, arr in floats.items():
                if not np.all(np.isfinite(arr)) or (c in _POSITIVE and not np.all(arr > 0)):
                    raise _FastPathRejected
            yield Panel(order_id=df["order_id"].to_numpy(dtype=np.int64),
                        sign=np.where(plus, 1, -1).astype(np.int64),
                        quantity=floats["quantity"], duration=floats["duration_days"],
                        start_logprice=floats["start_logprice"], end_logprice=floats["end_logprice"],
                        sigma=floats["sigma"], daily_volume=floats["daily_volume"])
    except (ValueError, TypeError, OverflowError, pd.errors.ParserError):
        raise _FastPathRejected from None


def _parse_block(rows: list[list[str]], first_row: int) -> Panel:
    """Vectorised parse; any failure re-parses row by row to name the culprit."""
    try:
        if any(len(f) != len(FILLS_COLUMNS) for f in rows):
            raise ValueError
        cols = list(zip(*rows))
        order_id = np.array(cols[0], dtype=np.int64)
        sign_text = np.array(cols[1])
        plus = (sign_text == "+1") | (sign_text == "1")
        if not np.all(plus | (sign_text == "-1")):
            raise ValueError
        floats = {c: np.array(col, dtype=float) for c, col in zip(FILLS_COLUMNS[2:], cols[2:])}
        for c, arr in floats.items():
            if not np.all(np.isfinite(arr)) or (c in _POSITIVE and not np.all(arr > 0)):
                raise ValueError
    except (ValueError, TypeError, OverflowError):
        parsed = [_parse_row(f, first_row + k) for k, f in enumerate(rows) if f]
        return _to_panel(parsed) if parsed else Panel.empty()
    return Panel(order_id=order_id, sign=np.where(plus, 1, -1).astype(np.int64),
                 quantity=floats["quantity"], duration=floats["duration_days"],
                 start_logprice=floats["start_logprice"], end_logprice=floats["end_logprice"],
                 sigma=floats["sigma"], daily_volume=floats["daily_volume"])


def _to_panel(rows: list[tuple]) -> Panel:
    cols = list(zip(*rows))
    return Panel(order_id=np.asarray(cols[0], np.int64), sign=np.asarray(cols[1], np.int64),
                 **{f: np.asarray(c, float) for f, c in zip(Panel.FIELDS[2:], cols[2:])})


def _fmt_sign(s: int) -> str:
    return "+1" if s > 0 else "-1"


def _format_panel(p: Panel) -> str:
    cols = [map(str, p.order_id.tolist()), map(_fmt_sign, p.sign.tolist())]
    cols += [map(repr, getattr(p, f).tolist()) for f in Panel.FIELDS[2:]]
    return "".join(",".join(r) + "\n" for r in zip(*cols))


def write_fills(records: Iterable, sink) -> int:
    """Write a header and one row per record; returns the number of data rows.

    ``records`` may mix :class:`MetaorderRecord` objects and :class:`Panel` blocks.
    """
    written = 0
    count = 0

    def emit(text: str):
        nonlocal written
        data = text.encode("utf-8")
        try:
            sink.write(data)
        except Exception as exc:  # noqa: BLE001
            raise SinkWriteError(exc, written) from exc
        written += len(data)

    emit(",".join(FILLS_COLUMNS) + "\n")
    pending: list[MetaorderRecord] = []
    for item in records:
        if isinstance(item, Panel):
            if pending:
                emit(_format_panel(Panel.from_records(pending)))
                count += len(pending)
                pending = []
            emit(_format_panel(item))
            count += len(item)
        else:
            pending.append(item)
            if len(pending) >= _ROWS_PER_BLOCK:
                emit(_format_panel(Panel.from_records(pending)))
                count += len(pending)
                pending = []
    if pending:
        emit(_format_panel(Panel.from_records(pending)))
        count += len(pending)
    return count


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_curves(stats: BucketStats, sink) -> int:
    """Bucketed curves, one row per populated cell, Q/V-major order."""
    grid = stats.grid
    centers, edges = grid.centers, grid.edges
    mean, var, se = stats.mean_or_nan, stats.variance, stats.std_err
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVES_COLUMNS)
    rows = 0
    for i in range(grid.shape[0]):
        for j, t in enumerate(grid.t_buckets):
            if stats.n[i, j] == 0:
                continue
            w.writerow([repr(float(centers[i])), repr(t), int(stats.n[i, j]), _num(mean[i, j]),
                        _num(var[i, j]), _num(se[i, j]), repr(float(edges[i])), repr(float(edges[i + 1]))])
            rows += 1
    sink.write(buf.getvalue().encode("utf-8"))
    return rows


def read_curves(source) -> BucketStats:
    """Rebuild per-cell statistics from a curves CSV (m2 = variance * (n - 1))."""
    reader = csv.reader(_text(source))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CURVES_COLUMNS:
        raise SchemaError(f"curves header must be {','.join(CURVES_COLUMNS)}; got {header!r}")
    rows = []
    for row, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != len(CURVES_COLUMNS):
            raise RowError(row, "*", f"expected {len(CURVES_COLUMNS)} fields, got {len(fields)}")
        try:
            rows.append((float(fields[1]), int(fields[2]), float(fields[3] or "nan"),
                         float(fields[4] or "nan"), float(fields[6]), float(fields[7])))
        except ValueError as exc:
            raise RowError(row, "*", str(exc)) from None
    if not rows:
        raise SchemaError("curves file has no data rows")
    edges = sorted({r[4] for r in rows} | {r[5] for r in rows})
    ts = sorted({r[0] for r in rows})
    grid = BucketGrid(tuple(edges), tuple(ts))
    stats = BucketStats.empty(grid)
    e = grid.edges
    for t, n, m, v, lo, _ in rows:
        i = int(np.searchsorted(e, lo))
        j = ts.index(t)
        stats.n[i, j] = n
        stats.mean[i, j] = m if n >= 1 else 0.0
        stats.m2[i, j] = v * (n - 1) if n >= 2 else 0.0
    return stats


class _Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def dump_json(obj, sink) -> None:
    """Deterministic JSON: sorted keys, two-space indent, NaN mapped to null."""
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, cls=_Encoder, allow_nan=False)
    sink.write((text + "\n").encode("utf-8"))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
