"""MAPE metric, evaluation reports and plot-data CSV."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, MalformedRowError, MissingInputError

PLOT_HEADER = ["hole_index", "measured_um", "predicted_um", "split"]


def mape(measured, predicted) -> float:
    """Mean absolute percentage error in percent.

    >>> mape([100, 200], [110, 180])
    10.0
    """
    m = np.asarray(measured, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if m.size != p.size or m.size == 0:
        raise DimensionError(f"need equal non-empty lengths, got {m.size} and {p.size}")
    if np.any(~(m > 0)):
        bad = int(np.flatnonzero(~(m > 0))[0])
        raise DomainError(f"measured value at position {bad} is {m[bad]!r}; MAPE needs all > 0")
    return float(100.0 * np.mean(np.abs(m - p) / m))


@dataclass
class EvalReport:
    region: str
    mape_percent: float
    hole_index: np.ndarray
    measured_um: np.ndarray
    predicted_um: np.ndarray
    lineage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "mape_percent": self.mape_percent,
            "n_test": int(self.hole_index.size),
            "records": [
                {"hole_index": int(h), "measured_um": float(m), "predicted_um": float(p)}
                for h, m, p in zip(self.hole_index, self.measured_um, self.predicted_um)
            ],
            "lineage": self.lineage,
        }


def evaluate_split(region: str, holes, measured, predicted, lineage=None) -> EvalReport:
    return EvalReport(region, mape(measured, predicted), np.asarray(holes, dtype=np.int64),
                      np.asarray(measured, dtype=np.float64),
                      np.asarray(predicted, dtype=np.float64), dict(lineage or {}))


def write_eval_report(report: EvalReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def write_plot_data(rows, path) -> Path:
    """``rows``: iterable of (hole_index, measured_um, predicted_um, split)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for h, m, p, s in rows:
            w.writerow([int(h), repr(float(m)), repr(float(p)), s])
    return path


def read_plot_data(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != PLOT_HEADER:
            raise MalformedRowError("expected header " + ",".join(PLOT_HEADER), path=path, line=1)
        for n, row in enumerate(reader, start=2):
            try:
                rows.append((int(row[0]), float(row[1]), float(row[2]), row[3]))
            except (ValueError, IndexError):
                raise MalformedRowError("bad plot-data row", path=path, line=n) from None
    return rows
