"""CSV emission and parsing for run records."""

from __future__ import annotations

import csv
from typing import Iterable

import numpy as np

from ..errors import OutputError
from .engine import ROW_FIELDS

HEADER = ("algo", "seed") + ROW_FIELDS


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_csv(records: Iterable, path) -> None:
    """Write rows sorted by ``(algo, seed, step)``; reals use 17 significant digits."""
    records = sorted(records, key=lambda r: (r.algo, r.seed))
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HEADER)
            for rec in records:
                order = np.argsort(rec.rows[:, 0], kind="stable")
                for row in rec.rows[order]:
                    writer.writerow([rec.algo, rec.seed, int(row[0])] + [_fmt(x) for x in row[1:]])
    except OSError as exc:
        raise OutputError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path) -> list:
    """Parse a file written by :func:`emit_csv` back into run records."""
    from .harness import RunRecord

    grouped: dict[tuple[str, int], list] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != HEADER:
                raise OutputError(f"{path}: unexpected header {header}")
            for line in reader:
                algo, seed = line[0], int(line[1])
                grouped.setdefault((algo, seed), []).append([float(x) for x in line[2:]])
    except OSError as exc:
        raise OutputError(f"cannot read CSV {path}: {exc}") from exc
    return [
        RunRecord(algo, seed, np.array(rows), diverged=bool(np.isinf(np.array(rows)[:, 1:]).any()))
        for (algo, seed), rows in grouped.items()
    ]
