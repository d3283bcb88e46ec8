"""Simulated nodes and components on top of the scheduler and mail system.

A node is a group of components sharing a fixed number of core slots. A
component is a logical thread: it owns one mailbox per incarnation, runs its
callbacks through the scheduler, and every callback it schedules is dropped
if the component has since crashed or restarted.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .broker import Broker
from .mailbox import DEFAULT_CAPACITY, Address, Envelope, Kind, MailSystem
from .sim import Scheduler

CONTROL_NODE = "control"


@dataclass
class CostModel:
    """Virtual service times in microseconds.

    ``consume_us`` is the per-message cost of pulling from the messaging layer
    (t_c), ``publish_us`` the per-message cost of a producer publish, and
    ``replay_us`` the per-event cost of rebuilding state after a restart.
    Processing costs come from each job's logic. With ``measured`` set, the
    processing cost is the wall time of the logic call times
    ``measured_scale`` instead.
    """

    consume_us: int = 200
    publish_us: int = 50
    replay_us: int = 2
    measured: bool = False
    measured_scale: float = 1.0


@dataclass
class LogEvent:
    t: int
    kind: str
    fields: dict[str, Any] = field(default_factory=dict)


class Node:
    def __init__(self, node_id: str, cores: Optional[int] = None, control: bool = False) -> None:
        self.node_id = node_id
        self.cores = cores
        self.control = control
        self.up = True
        self.down_until: Optional[int] = None
        self.components: dict[str, "Component"] = {}
        self.busy = 0
        self._waiters: deque[Callable[[], None]] = deque()

    def __repr__(self) -> str:
        return f"Node({self.node_id!r}, up={self.up}, load={self.load})"

    @property
    def load(self) -> int:
        return len(self.components)

    def acquire(self, fn: Callable[[], None]) -> None:
        """Run ``fn`` once a core slot is free (immediately if one is)."""
        if self.cores is None or self.busy < self.cores:
            self.busy += 1
            fn()
        else:
            self._waiters.append(fn)

    def release(self) -> None:
        while self._waiters:
            fn = self._waiters.popleft()
            # the core passes straight to the next waiter
            if fn() is not False:
                return
        self.busy = max(0, self.busy - 1)

    def reset_cores(self) -> None:
        self.busy = 0
        self._waiters.clear()


class Runtime:
    """Owns the clock, mail system, broker, nodes and the event log."""

    def __init__(self, sched: Optional[Scheduler] = None, n_nodes: int = 3,
                 cores_per_node: Optional[int] = None, costs: Optional[CostModel] = None,
                 broker: Optional[Broker] = None, track_delivery: bool = False) -> None:
        self.sched = sched or Scheduler()
        self.mail = MailSystem(clock=self.sched.clock, track_delivery=track_delivery)
        self.broker = broker or Broker(clock=self.sched.clock)
        self.costs = costs or CostModel()
        self.nodes: dict[str, Node] = {CONTROL_NODE: Node(CONTROL_NODE, None, control=True)}
        for i in range(n_nodes):
            nid = f"n{i}"
            self.nodes[nid] = Node(nid, cores_per_node)
        self.events: list[LogEvent] = []
        self.supervisor: Optional[Any] = None
        self._node_listeners: list[Callable[[str, bool], None]] = []

    @property
    def now(self) -> int:
        return self.sched.now

    @property
    def control(self) -> Node:
        return self.nodes[CONTROL_NODE]

    def worker_nodes(self) -> list[Node]:
        return [n for nid, n in sorted(self.nodes.items()) if not n.control]

    def log(self, kind: str, **fields: Any) -> None:
        self.events.append(LogEvent(self.sched.now, kind, fields))

    def least_loaded(self, exclude: Optional[set[str]] = None) -> Optional[Node]:
        best = None
        for node in self.worker_nodes():
            if not node.up or (exclude and node.node_id in exclude):
                continue
            if best is None or node.load < best.load:
                best = node
        return best

    def on_node_change(self, fn: Callable[[str, bool], None]) -> None:
        self._node_listeners.append(fn)

    def kill_node(self, node_id: str, until: Optional[int] = None) -> list[str]:
        node = self.nodes[node_id]
        if node.control:
            raise ValueError("the control node is never failed")
        if not node.up:
            return []
        node.up = False
        node.down_until = until
        victims = sorted(node.components)
        for name in victims:
            node.components[name].crash("node down")
        node.components.clear()
        node.reset_cores()
        self.log("node_down", node=node_id, components=victims)
        for fn in list(self._node_listeners):
            fn(node_id, False)
        return victims

    def restore_node(self, node_id: str) -> None:
        node = self.nodes[node_id]
        if node.up:
            return
        node.up = True
        node.down_until = None
        self.log("node_up", node=node_id)
        for fn in list(self._node_listeners):
            fn(node_id, True)

    def healthy_worker_count(self) -> int:
        return sum(1 for n in self.worker_nodes() if n.up)


class Component:
    """Base logical thread.

    Subclasses override :meth:`on_start`, :meth:`on_mail` and
    :meth:`on_crash`. ``mail_delay`` coalesces wake-ups: the mailbox is
    drained at most once per that many microseconds.
    """

    capacity = DEFAULT_CAPACITY
    mail_delay = 0

    def __init__(self, rt: Runtime, name: str) -> None:
        self.rt = rt
        self.name = name
        self.node: Optional[Node] = None
        self.address: Optional[Address] = None
        self.alive = False
        self.epoch = 0
        self.incarnations = 0
        self.supervisor: Optional[Any] = None
        self.manager: Optional["Component"] = None
        self._wake_pending = False
        self._holding_core = False

    def __repr__(self) -> str:
        where = self.node.node_id if self.node else "-"
        return f"{type(self).__name__}({self.name!r}@{where}, alive={self.alive})"

    # lifecycle

    def launch(self, node: Node) -> Address:
        if not node.up:
            raise RuntimeError(f"cannot launch {self.name} on down node {node.node_id}")
        self.epoch += 1
        self.incarnations += 1
        self.node = node
        self.alive = True
        self._wake_pending = False
        self._holding_core = False
        self.address = self.rt.mail.open_mailbox(node.node_id, self.name, self.capacity,
                                                 on_enqueue=self._wake)
        node.components[self.name] = self
        self.rt.log("spawn", component=self.name, node=node.node_id,
                    incarnation=self.address.incarnation)
        if self.supervisor is not None:
            self._beat()
        self.on_start()
        return self.address

    def crash(self, reason: str = "") -> None:
        if not self.alive:
            return
        self.epoch += 1
        self.alive = False
        if self.address is not None:
            self.rt.mail.close_mailbox(self.address)
        node = self.node
        if node is not None:
            node.components.pop(self.name, None)
            if self._holding_core and node.up:
                node.release()
        self._holding_core = False
        self.rt.log("crash", component=self.name, node=node.node_id if node else None,
                    reason=reason)
        self.on_crash(reason)

    def stop(self) -> None:
        """Graceful retirement: like a crash, but not a failure."""
        if not self.alive:
            return
        self.epoch += 1
        self.alive = False
        if self.address is not None:
            self.rt.mail.close_mailbox(self.address)
        if self.node is not None:
            self.node.components.pop(self.name, None)
        self.rt.log("retire", component=self.name)

    # scheduling helpers

    def after(self, delay: int, fn: Callable[..., Any], *args: Any) -> None:
        self.rt.sched.call_later(delay, self._fire, self.epoch, fn, args)

    def _fire(self, epoch: int, fn: Callable[..., Any], args: tuple) -> None:
        if epoch == self.epoch and self.alive:
            fn(*args)

    def guarded(self, fn: Callable[..., Any]) -> Callable[..., Any]:
        epoch = self.epoch

        def call(*args: Any) -> Any:
            if epoch != self.epoch or not self.alive:
                return False
            return fn(*args)
        return call

    def acquire_core(self, fn: Callable[[], None]) -> None:
        def granted() -> Any:
            if not self.alive:
                return False
            self._holding_core = True
            fn()
            return None
        self.node.acquire(self.guarded(granted))

    def release_core(self) -> None:
        if self._holding_core:
            self._holding_core = False
            self.node.release()

    def _wake(self) -> None:
        if not self._wake_pending:
            self._wake_pending = True
            self.after(self.mail_delay, self._drain)

    def _drain(self) -> None:
        self._wake_pending = False
        self.on_mail()

    def send(self, to: Address, kind: Kind, body: Any = None):
        return self.rt.mail.send(to, Envelope(kind, body, sender=self.address))

    def _beat(self) -> None:
        sup = self.supervisor
        if sup is None or not self.alive:
            return
        self.send(sup.address, Kind.HEARTBEAT, self.rt.now)
        self.after(sup.heartbeat_interval, self._beat)

    # hooks

    def on_start(self) -> None:
        pass

    def on_mail(self) -> None:
        pass

    def on_crash(self, reason: str) -> None:
        pass


def wall_cost(fn: Callable[[], Any], scale: float) -> tuple[Any, int]:
    t0 = time.perf_counter_ns()
    out = fn()
    return out, max(1, int((time.perf_counter_ns() - t0) / 1000 * scale))
