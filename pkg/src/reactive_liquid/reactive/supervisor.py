"""Supervisor component: heartbeat bookkeeping, detection cycles, restarts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..mailbox import Kind
from ..runtime import Component, Node, Runtime
from .supervision import (
    BACKOFF_CAP,
    SupervisionRecord,
    detect_failures,
    record_heartbeat,
    restart_backoff,
)


@dataclass
class _Entry:
    component: Component
    record: SupervisionRecord
    pending_restart: bool = False
    failed_node: Optional[str] = None


class Supervisor(Component):
    """Runs on the control node and restarts failed components elsewhere.

    Detection runs every ``detection_period``; a failed component is
    respawned after an exponential backoff on the least-loaded healthy node.
    The consecutive-restart counter resets once a component has stayed up
    for ``backoff_reset``.
    """

    capacity = 1 << 20

    def __init__(self, rt: Runtime, heartbeat_interval: int = 100_000, miss_threshold: int = 3,
                 detection_period: Optional[int] = None,
                 backoff_reset: int = 2 * BACKOFF_CAP, name: str = "supervisor") -> None:
        super().__init__(rt, name)
        self.heartbeat_interval = heartbeat_interval
        self.miss_threshold = miss_threshold
        self.detection_period = detection_period or heartbeat_interval
        self.backoff_reset = backoff_reset
        self.entries: dict[str, _Entry] = {}
        self.notices: list[tuple[int, object]] = []

    @property
    def heartbeat_timeout(self) -> int:
        return self.heartbeat_interval * self.miss_threshold

    def on_start(self) -> None:
        self.after(self.detection_period, self._cycle)

    def spawn(self, comp: Component, node: Node) -> None:
        """Launch ``comp`` on ``node`` under supervision."""
        comp.supervisor = self
        addr = comp.launch(node)
        rec = SupervisionRecord(addr, self.rt.now, self.heartbeat_interval, self.miss_threshold)
        self.entries[comp.name] = _Entry(comp, rec)

    def unsupervise(self, name: str) -> None:
        entry = self.entries.pop(name, None)
        if entry is not None:
            entry.component.supervisor = None

    def _wake(self) -> None:
        # heartbeats are batched into the detection cycle
        pass

    def _drain_mail(self) -> None:
        mail = self.rt.mail
        while True:
            env = mail.receive(self.address)
            if env is None:
                return
            if env.kind is Kind.HEARTBEAT:
                entry = self.entries.get(env.sender.component_id) if env.sender else None
                if entry is not None:
                    record_heartbeat(entry.record, env.sender, env.body)
            else:
                self.notices.append((self.rt.now, env.body))
                self.rt.log("notice", body=repr(env.body))

    def _cycle(self) -> None:
        self._drain_mail()
        now = self.rt.now
        records = [e.record for e in self.entries.values()]
        by_addr = {e.record.supervised: e for e in self.entries.values()}
        for addr in detect_failures(records, now):
            entry = by_addr[addr]
            comp = entry.component
            entry.failed_node = addr.node_id
            self.rt.log("detected", component=comp.name, node=addr.node_id,
                        incarnation=addr.incarnation)
            if comp.alive:
                # a hung component: make the failure real before replacing it
                comp.crash("declared failed")
            if comp.manager is not None and comp.manager.address is not None:
                self.send(comp.manager.address, Kind.FAILURE_NOTICE, comp.name)
            self._schedule_restart(entry)
        for entry in self.entries.values():
            if entry.pending_restart and entry.record.failed:
                self._try_restart(entry)
        self.after(self.detection_period, self._cycle)

    def _schedule_restart(self, entry: _Entry) -> None:
        rec = entry.record
        now = self.rt.now
        if rec.last_restart is not None and now - rec.last_restart > self.backoff_reset:
            rec.consecutive = 0
        rec.consecutive += 1
        delay = restart_backoff(rec.consecutive)
        self.rt.log("restart_scheduled", component=entry.component.name, delay=delay,
                    consecutive=rec.consecutive)
        entry.pending_restart = False
        self.after(delay, self._try_restart, entry)

    def _try_restart(self, entry: _Entry) -> None:
        if entry.component.name not in self.entries or not entry.record.failed:
            return
        node = self._placement(entry)
        if node is None:
            entry.pending_restart = True
            self.rt.log("restart_deferred", component=entry.component.name)
            return
        entry.pending_restart = False
        comp = entry.component
        addr = comp.launch(node)
        rec = entry.record
        rec.supervised = addr
        rec.last_heartbeat = self.rt.now
        rec.failed = False
        rec.restarts += 1
        rec.last_restart = self.rt.now
        self.rt.log("restarted", component=comp.name, node=node.node_id,
                    incarnation=addr.incarnation)
        if comp.manager is not None and comp.manager.address is not None:
            self.send(comp.manager.address, Kind.CONTROL, ("restarted", comp.name))

    def _placement(self, entry: _Entry) -> Optional[Node]:
        failed = self.rt.nodes.get(entry.failed_node) if entry.failed_node else None
        exclude = {failed.node_id} if failed is not None and not failed.up else None
        return self.rt.least_loaded(exclude)
