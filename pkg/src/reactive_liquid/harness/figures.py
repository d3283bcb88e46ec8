"""PNG figures for runs and comparisons."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .compare import ComparisonReport  # noqa: E402
from .metrics import RunMetrics  # noqa: E402

_STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.dpi": 120,
}


def run_figures(metrics: RunMetrics, out_dir: str, label: str = "") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(metrics.t, metrics.throughput, lw=1)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("messages / s")
        ax.set_title(f"throughput {label}".strip())
        paths.append(_save(fig, out_dir, "throughput.png"))

        fig, ax = plt.subplots()
        ax.plot(metrics.t, metrics.cumulative, lw=1.2)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("processed messages")
        ax.set_title(f"cumulative {label}".strip())
        paths.append(_save(fig, out_dir, "cumulative.png"))

        recs = metrics.unique_records()
        if recs:
            fig, ax = plt.subplots()
            ax.scatter([r.consume_time / 1e6 for r in recs],
                       [r.completion_us / 1e3 for r in recs], s=1, alpha=0.4)
            ax.set_xlabel("consume time [s]")
            ax.set_ylabel("completion time [ms]")
            ax.set_title(f"completion time {label}".strip())
            paths.append(_save(fig, out_dir, "completion.png"))
    return paths


def comparison_figure(report: ComparisonReport, out_dir: str, a_label: str = "a",
                      b_label: str = "b") -> str:
    os.makedirs(out_dir, exist_ok=True)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.scatter(report.a, report.b, s=6)
        hi = max(max(report.a, default=1), max(report.b, default=1))
        ax.plot([0, hi], [0, hi], color="grey", lw=0.8, ls="--", label="y = x")
        xs = [0, max(report.a, default=1)]
        ax.plot(xs, [report.slope * x + report.intercept for x in xs], color="C3", lw=1,
                label=f"fit: slope {report.slope:.2f}, R² {report.r_squared:.3f}")
        ax.set_xlabel(f"{a_label} processed")
        ax.set_ylabel(f"{b_label} processed")
        ax.legend(frameon=False)
        return _save(fig, out_dir, "comparison.png")


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
