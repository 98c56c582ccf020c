"""Run reports and their CSV / JSON serialization."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_KEYS = ("config", "rows", "summary", "version")


@dataclass
class RunReport:
    """Ordered rows (one per step / segment / temperature) plus summary scalars."""

    config: dict
    columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    version: str = ""
    wall_time: float = 0.0

    def add_row(self, **values):
        if not self.columns:
            self.columns = list(values)
        elif list(values) != self.columns:
            raise ValueError(f"row keys {list(values)} differ from header {self.columns}")
        self.rows.append({k: _plain(v) for k, v in values.items()})


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def format_float(x) -> str:
    """17 significant digits: enough to round-trip any double."""
    if isinstance(x, bool) or not isinstance(x, float):
        return str(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def vector_columns(prefix: str, v) -> dict:
    return {f"{prefix}_{i + 1}": float(x) for i, x in enumerate(np.atleast_1d(v))}


def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([format_float(row[c]) for c in report.columns])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    return v


def report_json(report: RunReport) -> str:
    """Stable schema: top-level keys config, rows, summary, version.

    Floats use Python's shortest round-trip repr. Wall time sits in summary,
    so JSON output is not byte-stable across runs; the CSV is.
    """
    doc = {
        "config": report.config,
        "rows": report.rows,
        "summary": {**report.summary, "wall_time_s": report.wall_time},
        "version": report.version,
    }
    return json.dumps(_json_safe(doc), indent=2) + "\n"


def emit_report(report: RunReport, fmt: str = "csv", path=None) -> str:
    """Serialize; write to ``path`` when given. IO errors propagate unchanged."""
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = report_json(report)
    else:
        raise ValueError(f"unknown format {fmt!r}; use csv or json")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def write_series_csv(path, prefix: str, values, start: int) -> None:
    """step, <prefix>_1..<prefix>_n table (observation and truth files)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step"] + [f"{prefix}_{i + 1}" for i in range(values.shape[1])])
        for j, row in enumerate(values, start=start):
            writer.writerow([j] + [format_float(float(x)) for x in row])


def read_series_csv(path, prefix: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "step" or any(
                h != f"{prefix}_{i + 1}" for i, h in enumerate(header[1:])):
            raise ValueError(f"{path}: expected header step,{prefix}_1,...")
        rows = [[float(x) for x in r[1:]] for r in reader if r]
    return np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
