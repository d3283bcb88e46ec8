"""Heartbeat failure detection and let-it-crash restart policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from ..mailbox import Address

BACKOFF_BASE = 100_000  # us
BACKOFF_FACTOR = 2
BACKOFF_CAP = 5_000_000  # us


@dataclass
class SupervisionRecord:
    supervised: Address
    last_heartbeat: int
    heartbeat_interval: int
    miss_threshold: int = 3
    restarts: int = 0
    failed: bool = False
    consecutive: int = 0
    last_restart: Optional[int] = None

    def __post_init__(self) -> None:
        if self.miss_threshold < 1:
            raise ValueError("miss_threshold must be positive")

    @property
    def timeout(self) -> int:
        return self.miss_threshold * self.heartbeat_interval

    def is_overdue(self, now: int) -> bool:
        return now - self.last_heartbeat > self.timeout


def record_heartbeat(record: SupervisionRecord, sender: Address, at: int) -> bool:
    """Apply a heartbeat; beats from stale incarnations are ignored."""
    if sender != record.supervised or record.failed:
        return False
    if at > record.last_heartbeat:
        record.last_heartbeat = at
    return True


def detect_failures(records: Iterable[SupervisionRecord], now: int) -> list[Address]:
    """Mark and return newly failed components; already-failed ones are skipped."""
    failed = []
    for rec in records:
        if not rec.failed and rec.is_overdue(now):
            rec.failed = True
            failed.append(rec.supervised)
    return failed


def restart_backoff(consecutive: int, base: int = BACKOFF_BASE,
                    factor: int = BACKOFF_FACTOR, cap: int = BACKOFF_CAP) -> int:
    """Delay before the ``consecutive``-th restart in a row (1-based)."""
    if consecutive < 1:
        return 0
    return min(cap, base * factor ** (consecutive - 1))
