"""Bounded, location-transparent mailboxes.

Every inter-component message travels through a :class:`MailSystem`. Sends
never block: the outcome is returned as a :class:`SendResult`, with
``MAILBOX_FULL`` acting as the backpressure signal and ``DEAD_LETTER`` for
addresses whose incarnation has been closed.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, NamedTuple, Optional

DEFAULT_CAPACITY = 1024


class Kind(Enum):
    DATA = "data"
    CONTROL = "control"
    HEARTBEAT = "heartbeat"
    FAILURE_NOTICE = "failure_notice"


class SendResult(Enum):
    ENQUEUED = "enqueued"
    MAILBOX_FULL = "mailbox_full"
    DEAD_LETTER = "dead_letter"


class MailboxClosed(Exception):
    pass


class Address(NamedTuple):
    """Immutable and ordered; a plain tuple underneath so hashing stays cheap."""

    node_id: str
    component_id: str
    incarnation: int


_ids = itertools.count()


@dataclass
class Envelope:
    kind: Kind
    body: Any = None
    sender: Optional[Address] = None
    to: Optional[Address] = None
    enqueue_time: int = 0
    id: int = field(default_factory=lambda: next(_ids))


class _Mailbox:
    __slots__ = ("address", "capacity", "queue", "workload", "open", "on_enqueue")

    def __init__(self, address: Address, capacity: int,
                 on_enqueue: Optional[Callable[[], None]]) -> None:
        self.address = address
        self.capacity = capacity
        self.queue: deque[Envelope] = deque()
        self.workload = 0
        self.open = True
        self.on_enqueue = on_enqueue


class MailSystem:
    """Registry of mailboxes keyed by component id and incarnation.

    ``on_enqueue`` callbacks run after a successful enqueue, outside the lock;
    the runtime uses them to wake an idle owner. ``track_delivery`` keeps the
    id of every delivered envelope and raises if one is ever handed out twice.
    """

    def __init__(self, clock: Optional[Callable[[], int]] = None,
                 track_delivery: bool = False) -> None:
        self._clock = clock or (lambda: 0)
        self._boxes: dict[Address, _Mailbox] = {}
        self._incarnations: dict[str, int] = {}
        self._lock = threading.Lock()
        self._delivered: Optional[set[int]] = set() if track_delivery else None
        self.dead_letters = 0

    def open_mailbox(self, node_id: str, component_id: str, capacity: int = DEFAULT_CAPACITY,
                     on_enqueue: Optional[Callable[[], None]] = None) -> Address:
        if capacity < 1:
            raise ValueError(f"mailbox capacity must be positive, got {capacity}")
        with self._lock:
            prev = self._incarnations.get(component_id)
            inc = 0 if prev is None else prev + 1
            self._incarnations[component_id] = inc
            addr = Address(node_id, component_id, inc)
            self._boxes[addr] = _Mailbox(addr, capacity, on_enqueue)
            return addr

    def close_mailbox(self, address: Address) -> list[Envelope]:
        """Close a mailbox; its undelivered envelopes are returned and dropped."""
        with self._lock:
            box = self._boxes.pop(address, None)
            if box is None:
                return []
            box.open = False
            left = list(box.queue)
            box.queue.clear()
            return left

    def is_live(self, address: Address) -> bool:
        return address in self._boxes

    def send(self, to: Address, envelope: Envelope) -> SendResult:
        with self._lock:
            box = self._boxes.get(to)
            if box is None:
                self.dead_letters += 1
                return SendResult.DEAD_LETTER
            if len(box.queue) >= box.capacity:
                return SendResult.MAILBOX_FULL
            envelope.to = to
            envelope.enqueue_time = self._clock()
            box.queue.append(envelope)
            if envelope.kind is not Kind.HEARTBEAT:
                box.workload += 1
            cb = box.on_enqueue
        if cb is not None:
            cb()
        return SendResult.ENQUEUED

    def receive(self, address: Address) -> Optional[Envelope]:
        with self._lock:
            box = self._boxes.get(address)
            if box is None:
                raise MailboxClosed(str(address))
            if not box.queue:
                return None
            env = box.queue.popleft()
            if env.kind is not Kind.HEARTBEAT:
                box.workload -= 1
            if self._delivered is not None:
                if env.id in self._delivered:
                    raise AssertionError(f"envelope {env.id} delivered twice")
                self._delivered.add(env.id)
            return env

    def queue_depth(self, address: Address, workload_only: bool = False) -> int:
        """Exact depth at call time; ``workload_only`` excludes heartbeats."""
        box = self._boxes.get(address)
        if box is None:
            raise MailboxClosed(str(address))
        return box.workload if workload_only else len(box.queue)

    def capacity(self, address: Address) -> int:
        box = self._boxes.get(address)
        if box is None:
            raise MailboxClosed(str(address))
        return box.capacity

    def has_room(self, address: Address) -> bool:
        box = self._boxes.get(address)
        return box is not None and len(box.queue) < box.capacity
