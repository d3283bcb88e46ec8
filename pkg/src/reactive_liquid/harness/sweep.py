"""Run many independent experiments across worker processes.

A ``RunResult`` holds the whole live simulation, so workers hand back a
compact, picklable ``RunSummary`` instead.
"""

from __future__ import annotations

import multiprocessing
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .config import ExperimentConfig
from .experiment import RunResult, run_experiment


@dataclass
class RunSummary:
    config: ExperimentConfig
    t: list[int]
    cumulative: list[int]
    tasks: list[int]
    active: list[int]
    duplicates: int
    median_completion_us: Optional[float]
    recovery: list[tuple[str, bool, bool]] = field(default_factory=list)
    # micro-clustering conservation: points absorbed vs points processed
    sum_n: int = 0
    processed: int = 0
    summary: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.cumulative[-1] if self.cumulative else 0

    @property
    def max_tasks(self) -> int:
        return max(self.tasks, default=0)


def summarize(result: RunResult) -> RunSummary:
    m = result.metrics
    times = [r.completion_us for r in m.unique_records()]
    sum_n = 0
    processed = 0
    for task in result.micro.all_tasks():
        if task.state is not None:
            sum_n += sum(cf.n for cf in task.state.clusters.clusters)
            processed += task.processed
    return RunSummary(
        config=result.config, t=list(m.t), cumulative=list(m.cumulative),
        tasks=[s.tasks for s in m.samples], active=[s.active for s in m.samples],
        duplicates=m.duplicates,
        median_completion_us=statistics.median(times) if times else None,
        recovery=[(c.component, c.eligible, c.ok) for c in result.recovery],
        sum_n=sum_n, processed=processed, summary=dict(m.summary))


def _run_one(args: tuple[ExperimentConfig, Optional[list]]) -> RunSummary:
    cfg, points = args
    return summarize(run_experiment(cfg, points=points))


def run_many(configs: Sequence[ExperimentConfig], points=None,
             workers: Optional[int] = None) -> list[RunSummary]:
    """Summaries in the order of ``configs``; ``workers=1`` runs in-process."""
    workers = workers or min(len(configs), os.cpu_count() or 1)
    jobs = [(cfg, points) for cfg in configs]
    if workers <= 1 or len(configs) <= 1:
        return [_run_one(j) for j in jobs]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_run_one, jobs))
