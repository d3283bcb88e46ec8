"""State management: append-only event streams and an origin-versioned CRDT map."""

from __future__ import annotations

import os
import pickle
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterator, Optional, TypeVar

from ..records import RecordWriter, recover_file

S = TypeVar("S")


@dataclass
class EventStream:
    stream_id: str
    events: list[tuple[int, Any]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


class EventStore:
    """One writer, many readers per stream; optionally file-backed.

    File-backed stores write one record per event using the segment framing,
    keyed by stream id. Reopening a directory recovers every complete record
    and drops a torn trailing one.
    """

    def __init__(self, path: Optional[str] = None,
                 encode: Callable[[Any], bytes] = pickle.dumps,
                 decode: Callable[[bytes], Any] = pickle.loads,
                 clock: Callable[[], int] = lambda: 0) -> None:
        self._streams: dict[str, EventStream] = {}
        self._lock = threading.Lock()
        self._encode = encode
        self._clock = clock
        self._writer: Optional[RecordWriter] = None
        self.path = path
        if path is not None:
            for rec in recover_file(path):
                sid = rec.key.decode()
                stream = self._streams.setdefault(sid, EventStream(sid))
                stream.events.append((len(stream.events), decode(rec.payload)))
            self._writer = RecordWriter(path)

    def stream(self, stream_id: str) -> EventStream:
        with self._lock:
            return self._streams.setdefault(stream_id, EventStream(stream_id))

    def append_event(self, stream_id: str, event: Any) -> int:
        with self._lock:
            stream = self._streams.setdefault(stream_id, EventStream(stream_id))
            seq = len(stream.events)
            if self._writer is not None:
                self._writer.append(stream_id.encode(), self._encode(event), self._clock())
            stream.events.append((seq, event))
            return seq

    def replay_stream(self, stream_id: str, fold: Callable[[S, Any], S], init: S) -> S:
        state = init
        for _, event in self.iter_events(stream_id):
            state = fold(state, event)
        return state

    def iter_events(self, stream_id: str) -> Iterator[tuple[int, Any]]:
        stream = self._streams.get(stream_id)
        if stream is None:
            return iter(())
        # snapshot length so a concurrent writer cannot extend the iteration
        return iter(stream.events[:len(stream.events)])

    def stream_ids(self) -> list[str]:
        return sorted(self._streams)

    def close(self) -> None:
        if self._writer is not None:
            self._writer.close()


class OwnershipError(Exception):
    pass


@dataclass
class CrdtMap:
    """State-based map where each origin owns and versions its own entries.

    ``replica_id`` is the origin allowed to write through :func:`crdt_put`.
    Merging keeps, per ``(origin, key)``, the entry with the higher version.
    """

    replica_id: Optional[str] = None
    entries: dict[tuple[str, Hashable], tuple[int, Any]] = field(default_factory=dict)
    dirty: set = field(default_factory=set, repr=False, compare=False)

    def get(self, origin: str, key: Hashable, default: Any = None) -> Any:
        hit = self.entries.get((origin, key))
        return default if hit is None else hit[1]

    def version(self, origin: str, key: Hashable) -> int:
        hit = self.entries.get((origin, key))
        return 0 if hit is None else hit[0]

    def values(self) -> Iterator[tuple[str, Hashable, Any]]:
        for (origin, key), (_, value) in self.entries.items():
            yield origin, key, value

    def take_delta(self) -> "CrdtMap":
        """Entries written since the last call, as a mergeable map."""
        delta = CrdtMap(self.replica_id, {k: self.entries[k] for k in self.dirty})
        self.dirty = set()
        return delta

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CrdtMap):
            return NotImplemented
        return self.entries == other.entries


def crdt_put(m: CrdtMap, origin: str, key: Hashable, value: Any) -> int:
    if m.replica_id is None or origin != m.replica_id:
        raise OwnershipError(f"replica {m.replica_id!r} cannot write origin {origin!r}")
    slot = (origin, key)
    version = m.version(origin, key) + 1
    m.entries[slot] = (version, value)
    m.dirty.add(slot)
    return version


def crdt_merge(a: CrdtMap, b: CrdtMap) -> CrdtMap:
    """Join of two replicas; the result keeps ``a``'s replica id."""
    merged = dict(a.entries)
    for slot, entry in b.entries.items():
        mine = merged.get(slot)
        if mine is None or entry[0] > mine[0]:
            merged[slot] = entry
    return CrdtMap(a.replica_id, merged)


def crdt_merge_into(target: CrdtMap, other: CrdtMap) -> None:
    """In-place variant of :func:`crdt_merge` for long-lived views."""
    entries = target.entries
    for slot, entry in other.entries.items():
        mine = entries.get(slot)
        if mine is None or entry[0] > mine[0]:
            entries[slot] = entry
