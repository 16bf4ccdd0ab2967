"""CSV emission with a fixed column order and 6 significant digits."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

METRICS_COLUMNS = ("zoo", "model_id", "method", "epoch", "sparsity", "train_acc", "test_acc", "ggap")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    if hasattr(v, "dtype") and getattr(v.dtype, "kind", "") == "f":
        return f"{float(v):.6g}"
    return str(v)


def emit_report(rows: Iterable[Mapping], path, columns: Sequence[str], delimiter: str = ",") -> Path:
    """Write ``rows`` under ``columns``; an empty iterable gives a header-only file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def read_report(path, delimiter: str = ",") -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh, delimiter=delimiter))
