"""Binary field files and CSV writers.

Field layout: the 8-byte magic ``NSFIELD1``, uint32 grid_n, uint32 rank
(0 scalar, 1 vector), then the real-space values as little-endian float64
in row-major order (component index first for vectors).
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct

import numpy as np

from .diagnostics import COLUMNS
from .errors import UsageError

MAGIC = b"NSFIELD1"
_HEADER = struct.Struct("<8sII")


def write_field(path, f: np.ndarray) -> None:
    """Write a real-space scalar (n,n,n) or vector (3,n,n,n) field."""
    f = np.asarray(f)
    if np.iscomplexobj(f):
        raise UsageError("write_field expects real-space values; call to_real first")
    if f.ndim == 3:
        rank = 0
    elif f.ndim == 4 and f.shape[0] == 3:
        rank = 1
    else:
        raise UsageError(f"field shape {f.shape} is neither (n,n,n) nor (3,n,n,n)")
    n = f.shape[-1]
    if f.shape[-3:] != (n, n, n):
        raise UsageError(f"field shape {f.shape} is not cubic")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, rank))
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def read_field(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise UsageError(f"{path}: too short for a field file")
    magic, n, rank = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise UsageError(f"{path}: bad magic {magic!r}")
    if rank not in (0, 1):
        raise UsageError(f"{path}: unsupported rank {rank}")
    shape = (n, n, n) if rank == 0 else (3, n, n, n)
    count = math.prod(shape)
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise UsageError(f"{path}: expected {count} values, found {len(body) / 8:g}")
    return np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64)


def field_hash(F: np.ndarray) -> str:
    """sha256 of the coefficient bytes; stable across runs on one platform."""
    return hashlib.sha256(np.ascontiguousarray(F).tobytes()).hexdigest()


def fmt(x) -> str:
    """17 significant digits; integers and non-finite values spelled plainly."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"
    return f"{x:.17g}"


def write_timeseries(traj, path) -> int:
    """One CSV row per ledger sample over COLUMNS; returns the row count."""
    led = traj.ledger
    if led is None:
        raise UsageError("trajectory has no ledger")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for rec in led.records:
            w.writerow([fmt(rec.get(c, 0.0)) for c in COLUMNS])
    return len(led.records)


def write_rows(path, rows: list[dict]) -> None:
    """CSV with the union of keys in first-seen order."""
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([fmt(r[k]) if k in r and not isinstance(r[k], str) else r.get(k, "") for k in keys])
