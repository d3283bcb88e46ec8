"""Failure injection: seeded node-kill schedules applied to a runtime."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable

from ..runtime import Runtime


@dataclass(frozen=True)
class FailurePlan:
    """At every window boundary each up node fails with probability ``p``.

    ``window`` and ``downtime`` are on the original time base (seconds);
    ``scale`` maps them to simulated time.
    """

    p: float
    window: float = 600.0
    downtime: float = 300.0
    seed: int = 0
    scale: float = 1 / 20

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("failure probability must lie in [0, 1]")
        if self.window <= 0 or self.downtime < 0 or self.scale <= 0:
            raise ValueError("window and scale must be positive, downtime non-negative")

    @property
    def window_us(self) -> int:
        return int(round(self.window * self.scale * 1_000_000))

    @property
    def downtime_us(self) -> int:
        return int(round(self.downtime * self.scale * 1_000_000))


@dataclass(frozen=True)
class FailureEvent:
    t: int
    action: str  # "kill" or "restore"
    node: str


def failure_ticker(plan: FailurePlan, nodes: Iterable[str], horizon_us: int) -> list[FailureEvent]:
    """The kill/restore schedule for boundaries strictly inside the horizon.

    Restores are listed even if they fall after the horizon.
    """
    rng = random.Random(plan.seed)
    node_ids = sorted(nodes)
    down_until: dict[str, int] = {}
    events: list[FailureEvent] = []
    t = plan.window_us
    while t < horizon_us:
        for nid in node_ids:
            if down_until.get(nid, -1) > t:
                continue
            if plan.p > 0 and rng.random() < plan.p:
                back = t + plan.downtime_us
                down_until[nid] = back
                events.append(FailureEvent(t, "kill", nid))
                events.append(FailureEvent(back, "restore", nid))
        t += plan.window_us
    events.sort(key=lambda e: (e.t, e.action != "restore", e.node))
    return events


def install_failures(rt: Runtime, schedule: list[FailureEvent]) -> None:
    for ev in schedule:
        if ev.action == "kill":
            until = next((e.t for e in schedule
                          if e.action == "restore" and e.node == ev.node and e.t >= ev.t), None)
            rt.sched.call_at(ev.t, rt.kill_node, ev.node, until)
        else:
            rt.sched.call_at(ev.t, rt.restore_node, ev.node)
