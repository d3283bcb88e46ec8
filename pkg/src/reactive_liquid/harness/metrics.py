"""Metric collection: completion records in, per-second series out."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..mailbox import Kind
from ..messages import CompletionRecord
from ..runtime import Component, Runtime
from ..sim import SECOND


class MetricsCollector(Component):
    """Control-node sink for completion records from every task."""

    capacity = 1 << 24
    mail_delay = 10_000

    def __init__(self, rt: Runtime, name: str = "metrics") -> None:
        super().__init__(rt, name)
        self.records: list[CompletionRecord] = []

    def on_mail(self) -> None:
        mail = self.rt.mail
        while True:
            env = mail.receive(self.address)
            if env is None:
                return
            if env.kind is Kind.DATA:
                self.records.append(env.body)

    def drain(self) -> list[CompletionRecord]:
        self.on_mail()
        return self.records


@dataclass
class Sample:
    t: int
    tasks: int
    active: int
    nodes_up: int


@dataclass
class RunMetrics:
    """Per-second series over ``t = 1..horizon`` plus per-message records.

    ``cumulative[k]`` counts distinct messages whose first completion came at
    or before ``t[k]`` seconds; repeat completions are tallied in
    ``duplicates`` and flagged in ``completions`` only.
    """

    t: list[int] = field(default_factory=list)
    throughput: list[int] = field(default_factory=list)
    cumulative: list[int] = field(default_factory=list)
    completions: list[tuple[CompletionRecord, bool]] = field(default_factory=list)
    duplicates: int = 0
    samples: list[Sample] = field(default_factory=list)
    recovery_us: list[int] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.cumulative[-1] if self.cumulative else 0

    @property
    def max_tasks(self) -> int:
        return max((s.tasks for s in self.samples), default=0)

    def unique_records(self) -> list[CompletionRecord]:
        return [r for r, dup in self.completions if not dup]


def build_metrics(records: list[CompletionRecord], horizon_s: int,
                  samples: Optional[list[Sample]] = None) -> RunMetrics:
    ordered = sorted(records, key=lambda r: (r.complete_time, r.msg_id, r.task))
    seen: set[str] = set()
    flagged: list[tuple[CompletionRecord, bool]] = []
    firsts: list[int] = []
    for r in ordered:
        dup = r.msg_id in seen
        if not dup:
            seen.add(r.msg_id)
            firsts.append(r.complete_time)
        flagged.append((r, dup))
    counts = [0] * (horizon_s + 1)
    for ct in firsts:
        # completion at exactly k seconds belongs to second k
        sec = max(1, -(-ct // SECOND))
        if sec <= horizon_s:
            counts[sec] += 1
    t = list(range(1, horizon_s + 1))
    throughput = counts[1:]
    cumulative = []
    acc = 0
    for c in throughput:
        acc += c
        cumulative.append(acc)
    return RunMetrics(t=t, throughput=throughput, cumulative=cumulative, completions=flagged,
                      duplicates=len(ordered) - len(seen), samples=list(samples or []))
