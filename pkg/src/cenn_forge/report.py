"""Deterministic report files: CSV tables plus JSON run metadata."""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path
from typing import Iterable, Sequence

from .cost import AnalyticReport, CostReport

RUN_DIR = re.compile(r"run-(\d{4,})$")


def next_run_dir(base) -> Path:
    """Create and return ``base/run-NNNN`` one past the highest existing index.

    Earlier runs are never touched, so reports accumulate.
    """
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    taken = [int(m.group(1)) for p in base.iterdir() if (m := RUN_DIR.match(p.name))]
    idx = max(taken, default=0) + 1
    while True:
        path = base / f"run-{idx:04d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            idx += 1


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def analytic_csv(rep: AnalyticReport) -> str:
    rows = [(name, d) for name, d in rep.layers] + [("total", rep.delay_ns)]
    return rows_to_csv(["layer", "delay_ns"], rows)


def comparison_csv(trace: CostReport, analytic: AnalyticReport) -> str:
    """Trace and closed-form delays side by side; the gap is reported, never averaged away."""
    closed = dict(analytic.layers)
    rows = []
    for l in trace.layers:
        a = closed.get(l.layer, float("nan"))
        rows.append((l.layer, l.delay_ns, a, a - l.delay_ns))
    rows.append(("total", trace.delay_ns, analytic.delay_ns, analytic.delay_ns - trace.delay_ns))
    return rows_to_csv(["layer", "trace_delay_ns", "analytic_delay_ns", "analytic_minus_trace_ns"], rows)


def predictions_csv(labels, predictions, scores) -> str:
    n_cls = scores.shape[1] if len(scores) else 0
    header = ["index", "label", "prediction"] + [f"score{k}" for k in range(n_cls)]
    rows = []
    for i, (lab, pred, s) in enumerate(zip(labels, predictions, scores)):
        rows.append([i, int(lab), int(pred)] + [f"{float(v):.9f}" for v in s])
    return rows_to_csv(header, rows)


def write_files(directory: Path, files: dict) -> list:
    out = []
    for name, text in sorted(files.items()):
        path = directory / name
        path.write_text(text)
        out.append(path)
    return out
