"""CSV tables with '#' comment lines and unit-suffixed headers, and JSON reports."""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from .config import DataError

__all__ = ["read_table", "write_table", "format_number", "to_jsonable", "write_report"]


def format_number(v) -> str:
    if isinstance(v, (str, bool)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path: Path, header: Sequence[str], columns: Sequence, comments: Sequence[str] = ()):
    """Write equal-length columns; floats use the shortest round-trip repr."""
    n = len(columns[0]) if columns else 0
    if any(len(c) != n for c in columns):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([format_number(c[i]) for c in columns])


def read_table(path: Path, required: Sequence[str], optional: Sequence[str] = ()) -> dict:
    """Read a numeric CSV.  Returns {column: float array}.

    Blank lines and lines starting with '#' are skipped.  Any missing
    column, ragged row or non-numeric field raises :class:`DataError`
    naming the file and line.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    header = None
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = next(csv.reader([text]))
            if header is None:
                header = [f.strip() for f in fields]
                missing = [c for c in required if c not in header]
                if missing:
                    raise DataError(f"{path.name} line {lineno}: missing columns {missing} in header {header}")
                continue
            if len(fields) != len(header):
                raise DataError(f"{path.name} line {lineno}: expected {len(header)} fields, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise DataError(f"{path.name} line {lineno}: non-numeric field in {text!r}") from None
    if header is None:
        raise DataError(f"{path.name}: no header row")
    if not rows:
        raise DataError(f"{path.name}: no data rows")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path.name}: non-finite values")
    return {c: data[:, header.index(c)] for c in list(required) + [c for c in optional if c in header]}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Path):
        return obj.name
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def build_report(cfg, results: dict, outputs: Sequence[str]) -> dict:
    return {
        "command": cfg.command,
        "config_digest": cfg.digest,
        "config": to_jsonable(dict(cfg.params)),
        "seed": cfg.seed,
        "version": __version__,
        "outputs": list(outputs),
        "results": to_jsonable(results),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def write_report(path: Path, report: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
