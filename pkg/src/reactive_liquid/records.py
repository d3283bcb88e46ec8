"""Length-prefixed record framing for partition segments and event-stream files.

Layout per record, little-endian::

    [u32 key_len][key][u32 payload_len][payload][u64 append_time_micros]

A missing key is written as ``key_len = 0xFFFFFFFF`` with no key bytes, so an
empty key and an absent key stay distinguishable. Offsets are implicit in
record position.
"""

from __future__ import annotations

import os
import struct
from typing import BinaryIO, Iterator, NamedTuple, Optional

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
NO_KEY = 0xFFFFFFFF


class Record(NamedTuple):
    key: Optional[bytes]
    payload: bytes
    append_time: int


def encode_record(key: Optional[bytes], payload: bytes, append_time: int) -> bytes:
    if key is None:
        head = _U32.pack(NO_KEY)
    else:
        head = _U32.pack(len(key)) + key
    return head + _U32.pack(len(payload)) + payload + _U64.pack(append_time)


def _read_exact(fh: BinaryIO, n: int) -> Optional[bytes]:
    data = fh.read(n)
    if len(data) != n:
        return None
    return data


def iter_records(fh: BinaryIO) -> Iterator[tuple[int, Record]]:
    """Yield ``(end_position, record)`` for every complete record.

    Iteration stops silently at the first torn (truncated) record.
    """
    while True:
        raw = _read_exact(fh, 4)
        if raw is None:
            return
        (key_len,) = _U32.unpack(raw)
        key: Optional[bytes] = None
        if key_len != NO_KEY:
            key = _read_exact(fh, key_len)
            if key is None:
                return
        raw = _read_exact(fh, 4)
        if raw is None:
            return
        (payload_len,) = _U32.unpack(raw)
        payload = _read_exact(fh, payload_len)
        if payload is None:
            return
        raw = _read_exact(fh, 8)
        if raw is None:
            return
        (append_time,) = _U64.unpack(raw)
        yield fh.tell(), Record(key, payload, append_time)


def recover_file(path: str | os.PathLike) -> list[Record]:
    """Read every complete record and truncate a torn tail in place."""
    if not os.path.exists(path):
        return []
    records: list[Record] = []
    good_end = 0
    with open(path, "rb") as fh:
        for end, rec in iter_records(fh):
            records.append(rec)
            good_end = end
    if os.path.getsize(path) != good_end:
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return records


class RecordWriter:
    """Append-only writer; each append is flushed before returning."""

    def __init__(self, path: str | os.PathLike, fsync: bool = False) -> None:
        self.path = os.fspath(path)
        self._fh = open(self.path, "ab")
        self._fsync = fsync

    def append(self, key: Optional[bytes], payload: bytes, append_time: int) -> None:
        self._fh.write(encode_record(key, payload, append_time))
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()
