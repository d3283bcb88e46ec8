"""CSV and summary output for a run or a comparison."""

from __future__ import annotations

import csv
import json
import os
from typing import Optional

from .compare import ComparisonReport
from .metrics import RunMetrics


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_reports(metrics: RunMetrics, out_dir: str,
                 comparison: Optional[ComparisonReport] = None) -> list[str]:
    """Write the run's CSVs and ``summary.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name: str) -> str:
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    _write_csv(path("throughput.csv"), ["t_sec", "count"],
               zip(metrics.t, metrics.throughput))
    _write_csv(path("cumulative.csv"), ["t_sec", "total"],
               zip(metrics.t, metrics.cumulative))
    _write_csv(path("completion.csv"),
               ["msg_id", "consume_us", "complete_us", "wait_us", "process_us", "batch_n",
                "batch_index", "task", "duplicate"],
               ((r.msg_id, r.consume_time, r.complete_time, r.wait_us, r.process_us, r.batch_n,
                 r.batch_index, r.task, int(dup)) for r, dup in metrics.completions))
    _write_csv(path("tasks.csv"), ["t_sec", "tasks", "active", "nodes_up"],
               ((s.t, s.tasks, s.active, s.nodes_up) for s in metrics.samples))
    if comparison is not None:
        written.extend(emit_comparison(comparison, out_dir))
    summary = dict(metrics.summary)
    summary.update(total=metrics.total, duplicates=metrics.duplicates,
                   completions=len(metrics.completions), max_tasks=metrics.max_tasks,
                   recovery_us=metrics.recovery_us)
    with open(path("summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written


def emit_comparison(report: ComparisonReport, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "comparison.csv")
    _write_csv(csv_path, ["t_sec", "a_total", "b_total"], zip(report.t, report.a, report.b))
    txt_path = os.path.join(out_dir, "comparison_summary.txt")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(f"points: {len(report.t)}\n")
        fh.write(f"slope: {report.slope:.6f}\n")
        fh.write(f"intercept: {report.intercept:.6f}\n")
        fh.write(f"r_squared: {report.r_squared:.6f}\n")
        fh.write(f"verdict: {report.verdict}\n")
    return [csv_path, txt_path]


def read_cumulative(run_dir: str) -> RunMetrics:
    """Rebuild the per-second series of a finished run from its CSVs."""
    m = RunMetrics()
    with open(os.path.join(run_dir, "cumulative.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            m.t.append(int(row["t_sec"]))
            m.cumulative.append(int(row["total"]))
    prev = 0
    for c in m.cumulative:
        m.throughput.append(c - prev)
        prev = c
    return m
