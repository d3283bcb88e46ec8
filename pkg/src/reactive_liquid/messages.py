"""Data records passed between the messaging, processing and metrics layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(slots=True)
class StreamMessage:
    """A log message after it has been consumed off the messaging layer.

    ``consume_time`` is when the batch holding it started being consumed and
    ``batch_n`` that batch's size; ``consumed_at`` is when the whole batch had
    been consumed, the baseline for queue-delay measurement.
    """

    msg_id: str
    key: Optional[bytes]
    payload: bytes
    partition: int
    offset: int
    consume_time: int
    batch_n: int
    consumed_at: int
    batch_index: int = 0


@dataclass(slots=True)
class Output:
    topic: str
    key: Optional[bytes]
    payload: bytes


@dataclass(slots=True)
class CompletionRecord:
    msg_id: str
    job_id: str
    task: str
    consume_time: int
    complete_time: int
    wait_us: int
    process_us: int
    batch_n: int
    batch_index: int

    @property
    def completion_us(self) -> int:
        return self.complete_time - self.consume_time


def message_id(topic: str, partition: int, offset: int) -> str:
    return f"{topic}:{partition}:{offset}"
