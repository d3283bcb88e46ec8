"""Elastic worker sizing from observed queue depth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class ElasticPoolConfig:
    min_workers: int = 1
    max_workers: int = 4
    high_watermark: float = 50.0
    low_watermark: float = 5.0
    evaluation_period: int = 500_000  # us
    cooldown: int = 1_000_000  # us

    def __post_init__(self) -> None:
        if self.min_workers < 1 or self.max_workers < 1:
            raise ValueError("worker bounds must be positive")
        if self.min_workers > self.max_workers:
            raise ValueError("min_workers exceeds max_workers")
        if not self.low_watermark < self.high_watermark:
            raise ValueError("low_watermark must be below high_watermark")
        if self.low_watermark <= 0:
            raise ValueError("low_watermark must be positive")


@dataclass(frozen=True)
class ScalingDecision:
    action: str  # "hold" | "up" | "down"
    k: int = 0

    @classmethod
    def hold(cls) -> "ScalingDecision":
        return cls("hold", 0)

    @classmethod
    def up(cls, k: int) -> "ScalingDecision":
        return cls("up", k)

    @classmethod
    def down(cls, k: int) -> "ScalingDecision":
        return cls("down", k)

    @property
    def is_hold(self) -> bool:
        return self.action == "hold"

    def apply(self, current: int) -> int:
        if self.action == "up":
            return current + self.k
        if self.action == "down":
            return current - self.k
        return current


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, v))


def evaluate_scaling(config: ElasticPoolConfig, total_queue_depth: int,
                     current_workers: int) -> ScalingDecision:
    """Stateless sizing rule; cooldown is applied by :class:`ElasticScaler`."""
    if total_queue_depth < 0:
        raise ValueError("queue depth cannot be negative")
    lo, hi = config.min_workers, config.max_workers
    current = _clamp(current_workers, lo, hi)
    per_worker = total_queue_depth / current
    if per_worker > config.high_watermark:
        target = _clamp(math.ceil(total_queue_depth / config.high_watermark), lo, hi)
        if target > current:
            return ScalingDecision.up(target - current)
    elif per_worker < config.low_watermark and current > lo:
        target = _clamp(math.ceil(total_queue_depth / config.low_watermark), lo, hi)
        if target < current:
            return ScalingDecision.down(current - target)
    return ScalingDecision.hold()


class ElasticScaler:
    """:func:`evaluate_scaling` plus the cooldown between non-hold decisions."""

    def __init__(self, config: ElasticPoolConfig) -> None:
        self.config = config
        self.last_change: Optional[int] = None

    def evaluate(self, total_queue_depth: int, current_workers: int, now: int) -> ScalingDecision:
        if self.last_change is not None and now - self.last_change < self.config.cooldown:
            return ScalingDecision.hold()
        decision = evaluate_scaling(self.config, total_queue_depth, current_workers)
        if not decision.is_hold:
            self.last_change = now
        return decision
