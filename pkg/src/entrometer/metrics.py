"""Aggregate evaluation metrics and the points/metrics CSV formats.

All CSV files are UTF-8, comma-separated, with a mandatory header row that
carries units; the points file is sufficient to rebuild every figure
without rerunning any computation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    n_points: int
    rmse: float                # nats
    coverage_1sigma: float
    coverage_2sigma: float
    history_csv: str = ""

    def rows(self) -> list[tuple[str, str]]:
        out = [
            ("n_points", str(self.n_points)),
            ("rmse_nats", repr(self.rmse)),
            ("coverage_1sigma", repr(self.coverage_1sigma)),
            ("coverage_2sigma", repr(self.coverage_2sigma)),
        ]
        if self.history_csv:
            out.append(("history_csv", self.history_csv))
        return out


def compute_metrics(labels, means, sigmas, history_csv: str = "") -> MetricsReport:
    """RMSE plus the fraction of points within 1 and 2 total sigma."""
    labels = np.asarray(labels, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("no evaluation points")
    err = np.abs(labels - means)
    rmse = float(np.sqrt(np.mean(err ** 2)))
    cov1 = float(np.mean(err <= sigmas))
    cov2 = float(np.mean(err <= 2.0 * sigmas))
    return MetricsReport(labels.size, rmse, cov1, cov2, history_csv)


def write_metrics_csv(path: str | Path, report: MetricsReport) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(report.rows())
    return path


def write_points_csv(path: str | Path, header: list[str],
                     rows: list[list]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def read_csv_columns(path: str | Path) -> dict[str, list[str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[str]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(v)
    return cols
