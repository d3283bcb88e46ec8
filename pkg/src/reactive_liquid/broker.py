"""In-process partitioned publish/subscribe log.

Topics are split into a fixed number of offset-ordered partitions. Consumer
groups share a topic subscription so that each partition feeds at most one
member; membership changes trigger a deterministic round-robin rebalance.
Committed offsets are monotone per (group, topic, partition).
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .records import RecordWriter, recover_file

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


class BrokerError(Exception):
    pass


class DuplicateTopic(BrokerError):
    pass


class InvalidPartitionCount(BrokerError):
    pass


class UnknownTopic(BrokerError):
    pass


class UnknownPartition(BrokerError):
    pass


class InvalidOffset(BrokerError):
    pass


class UnknownGroup(BrokerError):
    pass


@dataclass(frozen=True)
class LogMessage:
    key: Optional[bytes]
    payload: bytes
    offset: int
    append_time: int
    partition: int = 0


class Partition:
    def __init__(self, index: int, writer: Optional[RecordWriter] = None) -> None:
        self.index = index
        self._messages: list[LogMessage] = []
        self._lock = threading.Lock()
        self._writer = writer

    def append(self, key: Optional[bytes], payload: bytes, append_time: int) -> int:
        with self._lock:
            offset = len(self._messages)
            if self._writer is not None:
                self._writer.append(key, payload, append_time)
            self._messages.append(LogMessage(key, payload, offset, append_time, self.index))
            return offset

    def read(self, from_offset: int, max_n: int) -> list[LogMessage]:
        # list slicing on an append-only list never observes a partial append
        return self._messages[from_offset:from_offset + max_n]

    def end_offset(self) -> int:
        return len(self._messages)

    def _load(self, messages: list[LogMessage]) -> None:
        self._messages = messages

    def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            self._writer = None


@dataclass
class TopicLog:
    name: str
    partitions: list[Partition]

    @property
    def partition_count(self) -> int:
        return len(self.partitions)


@dataclass(frozen=True)
class GroupAssignment:
    group: str
    topic: str
    mapping: tuple[Optional[str], ...]
    generation: int
    members: tuple[str, ...] = ()

    def partitions_of(self, consumer_id: str) -> list[int]:
        return [p for p, c in enumerate(self.mapping) if c == consumer_id]

    def active_consumers(self) -> set[str]:
        return {c for c in self.mapping if c is not None}

    def idle_consumers(self) -> set[str]:
        return set(self.members) - self.active_consumers()


def round_robin_assignment(members: list[str], partition_count: int) -> tuple[Optional[str], ...]:
    ordered = sorted(members)
    if not ordered:
        return (None,) * partition_count
    return tuple(ordered[p % len(ordered)] for p in range(partition_count))


@dataclass
class _Group:
    members: set[str] = field(default_factory=set)
    assignment: Optional[GroupAssignment] = None


class Broker:
    """Topic registry, produce/fetch, consumer groups and offset commits.

    ``clock`` returns the append timestamp in microseconds; pass a simulated
    clock to make append times deterministic. With ``data_dir`` every
    partition is mirrored to an append-only segment file and committed offsets
    to ``offsets.json``; :meth:`open` rebuilds a broker from such a directory.
    """

    def __init__(self, clock: Optional[Callable[[], int]] = None,
                 data_dir: Optional[str] = None) -> None:
        self._clock = clock or (lambda: time.time_ns() // 1000)
        self._topics: dict[str, TopicLog] = {}
        self._groups: dict[tuple[str, str], _Group] = {}
        self._committed: dict[tuple[str, str, int], int] = {}
        self._rr: dict[tuple[str, str], int] = {}
        self._key_cache: dict[tuple[bytes, int], int] = {}
        self._lock = threading.RLock()
        self.data_dir = data_dir
        if data_dir is not None:
            os.makedirs(data_dir, exist_ok=True)

    # topics

    def create_topic(self, name: str, partitions: int) -> TopicLog:
        if partitions < 1:
            raise InvalidPartitionCount(f"topic {name!r} needs at least one partition, got {partitions}")
        with self._lock:
            if name in self._topics:
                raise DuplicateTopic(name)
            parts = [Partition(i, self._segment_writer(name, i)) for i in range(partitions)]
            topic = TopicLog(name, parts)
            self._topics[name] = topic
            if self.data_dir is not None:
                self._write_meta()
            return topic

    def topic(self, name: str) -> TopicLog:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopic(name) from None

    def topics(self) -> list[str]:
        return sorted(self._topics)

    def _partition(self, topic: str, partition: int) -> Partition:
        parts = self.topic(topic).partitions
        if not 0 <= partition < len(parts):
            raise UnknownPartition(f"{topic}[{partition}]")
        return parts[partition]

    # produce / fetch

    def partition_for(self, topic: str, key: Optional[bytes], producer_id: str = "") -> int:
        count = self.topic(topic).partition_count
        if key is not None:
            cached = self._key_cache.get((key, count))
            if cached is None:
                cached = fnv1a_64(key) % count
                self._key_cache[(key, count)] = cached
            return cached
        with self._lock:
            slot = (producer_id, topic)
            n = self._rr.get(slot, 0)
            self._rr[slot] = n + 1
        return n % count

    def publish(self, topic: str, key: Optional[bytes], payload: bytes,
                producer_id: str = "") -> tuple[int, int]:
        p = self.partition_for(topic, key, producer_id)
        offset = self._partition(topic, p).append(key, payload, self._clock())
        return p, offset

    def fetch(self, topic: str, partition: int, from_offset: int, max_n: int) -> list[LogMessage]:
        if from_offset < 0:
            raise InvalidOffset(f"negative offset {from_offset}")
        if max_n < 1:
            raise ValueError("max_n must be positive")
        return self._partition(topic, partition).read(from_offset, max_n)

    def end_offset(self, topic: str, partition: int) -> int:
        return self._partition(topic, partition).end_offset()

    # consumer groups

    def join_group(self, group: str, topic: str, consumer_id: str) -> GroupAssignment:
        with self._lock:
            t = self.topic(topic)
            g = self._groups.setdefault((group, topic), _Group())
            g.members.add(consumer_id)
            return self._rebalance(group, topic, g, t.partition_count)

    def leave_group(self, group: str, topic: str, consumer_id: str) -> GroupAssignment:
        with self._lock:
            t = self.topic(topic)
            g = self._groups.setdefault((group, topic), _Group())
            if consumer_id not in g.members:
                if g.assignment is None:
                    g.assignment = GroupAssignment(group, topic, (None,) * t.partition_count, 0)
                return g.assignment
            g.members.discard(consumer_id)
            return self._rebalance(group, topic, g, t.partition_count)

    def assignment(self, group: str, topic: str) -> GroupAssignment:
        with self._lock:
            t = self.topic(topic)
            g = self._groups.get((group, topic))
            if g is None or g.assignment is None:
                return GroupAssignment(group, topic, (None,) * t.partition_count, 0)
            return g.assignment

    def _rebalance(self, group: str, topic: str, g: _Group, count: int) -> GroupAssignment:
        generation = g.assignment.generation + 1 if g.assignment else 1
        mapping = round_robin_assignment(list(g.members), count)
        g.assignment = GroupAssignment(group, topic, mapping, generation, tuple(sorted(g.members)))
        return g.assignment

    # offsets

    def commit_offset(self, group: str, topic: str, partition: int, offset: int) -> int:
        self._partition(topic, partition)
        if offset < 0:
            raise InvalidOffset(f"negative offset {offset}")
        with self._lock:
            slot = (group, topic, partition)
            value = max(self._committed.get(slot, 0), offset)
            self._committed[slot] = value
            if self.data_dir is not None:
                self._write_offsets()
            return value

    def fetch_committed(self, group: str, topic: str, partition: int) -> int:
        self._partition(topic, partition)
        return self._committed.get((group, topic, partition), 0)

    def lag(self, group: str, topic: str) -> int:
        return sum(self.end_offset(topic, p) - self.fetch_committed(group, topic, p)
                   for p in range(self.topic(topic).partition_count))

    # persistence

    def close(self) -> None:
        """Flush and close every segment file."""
        for t in self._topics.values():
            for part in t.partitions:
                part.close()

    def _segment_writer(self, topic: str, index: int) -> Optional[RecordWriter]:
        if self.data_dir is None:
            return None
        tdir = os.path.join(self.data_dir, topic)
        os.makedirs(tdir, exist_ok=True)
        return RecordWriter(os.path.join(tdir, f"{index:05d}.log"))

    def _write_meta(self) -> None:
        meta = {name: t.partition_count for name, t in self._topics.items()}
        _atomic_json(os.path.join(self.data_dir, "topics.json"), meta)

    def _write_offsets(self) -> None:
        rows = [[g, t, p, o] for (g, t, p), o in sorted(self._committed.items())]
        _atomic_json(os.path.join(self.data_dir, "offsets.json"), rows)

    @classmethod
    def open(cls, data_dir: str, clock: Optional[Callable[[], int]] = None) -> "Broker":
        """Rebuild a broker from ``data_dir``; torn segment tails are truncated."""
        broker = cls(clock=clock, data_dir=None)
        with open(os.path.join(data_dir, "topics.json")) as fh:
            meta = json.load(fh)
        broker.data_dir = data_dir
        for name, count in meta.items():
            parts = []
            for i in range(count):
                path = os.path.join(data_dir, name, f"{i:05d}.log")
                recs = recover_file(path)
                part = Partition(i, RecordWriter(path))
                part._load([LogMessage(r.key, r.payload, off, r.append_time, i)
                            for off, r in enumerate(recs)])
                parts.append(part)
            broker._topics[name] = TopicLog(name, parts)
        offsets_path = os.path.join(data_dir, "offsets.json")
        if os.path.exists(offsets_path):
            with open(offsets_path) as fh:
                for g, t, p, o in json.load(fh):
                    broker._committed[(g, t, p)] = o
        return broker


def _atomic_json(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh)
    os.replace(tmp, path)
