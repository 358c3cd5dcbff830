"""Small shared helpers: angle arithmetic and deterministic file output."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np


def wrap01(x):
    """Reduce angles to the canonical range [0, 1).

    Plain % can round a tiny negative up to exactly 1.0; fold that back."""
    r = np.asarray(x, dtype=float) % 1.0
    return np.where(r >= 1.0, 0.0, r)


def sin2pi(x):
    """sin(2 pi x) with exact zeros at half-integer x.

    Keeps relative equilibria of the built-in metrics exact: the right-hand
    side vanishes identically on them instead of seeding exponential drift
    with an O(1e-16) residue.
    """
    v = (2.0 * np.asarray(x, dtype=float)) % 2.0
    k = np.round(v)
    r = v - k
    return np.where(k % 2.0 == 0.0, 1.0, -1.0) * np.sin(np.pi * r)


def cos2pi(x):
    """cos(2 pi x) with exact extremes at half-integer x."""
    v = (2.0 * np.asarray(x, dtype=float)) % 2.0
    k = np.round(v)
    r = v - k
    return np.where(k % 2.0 == 0.0, 1.0, -1.0) * np.cos(np.pi * r)


def circdist(a, b):
    """Distance between period-1 angles, in [0, 1/2]."""
    d = np.abs(wrap01(a) - wrap01(b))
    return np.minimum(d, 1.0 - d)


def circdelta(a, b):
    """Signed shortest displacement from b to a, in [-1/2, 1/2)."""
    return (np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + 0.5) % 1.0 - 0.5


def unwrap01(phis: np.ndarray) -> np.ndarray:
    """Lift a sampled period-1 angle path to a continuous real path.

    Assumes consecutive samples differ by less than half a period.
    """
    phis = np.asarray(phis, dtype=float)
    d = np.diff(phis)
    steps = d - np.round(d)
    return np.concatenate(([phis[0]], phis[0] + np.cumsum(steps)))


def _atomic_write(path: str, data: str) -> None:
    """Write text atomically: temp file in the target dir, then rename."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, payload) -> None:
    """Serialize to JSON with stable key order; floats via repr round-trip."""
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write RFC-4180 CSV with a fixed float format for reproducibility."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([_fmt_cell(c) for c in row])
    _atomic_write(path, buf.getvalue())


def _fmt_cell(c):
    if isinstance(c, (float, np.floating)):
        return format(float(c), ".17g")
    if isinstance(c, (int, np.integer)):
        return str(int(c))
    return c


def as_float_array(x, n: int | None = None, name: str = "array") -> np.ndarray:
    """Coerce to a 1-D float array, optionally checking length."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if n is not None and arr.size != n:
        raise ValueError(f"{name} must have length {n}, got {arr.size}")
    return arr
