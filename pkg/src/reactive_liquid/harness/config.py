"""Experiment configuration and input-source parsing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSource:
    taxis: int = 200
    points: int = 1000
    hotspots: int = 20
    seed: Optional[int] = None


@dataclass(frozen=True)
class TDriveSource:
    path: str


def parse_input(spec: str):
    """``synth:taxis=200,points=1000,hotspots=20`` or ``tdrive:PATH``."""
    kind, _, rest = spec.partition(":")
    if kind == "tdrive":
        if not rest:
            raise ConfigError("tdrive input needs a path")
        return TDriveSource(rest)
    if kind == "synth":
        opts = {}
        for part in filter(None, rest.split(",")):
            name, eq, value = part.partition("=")
            if not eq or name not in ("taxis", "points", "hotspots", "seed"):
                raise ConfigError(f"bad synth option {part!r}")
            try:
                opts[name] = int(value)
            except ValueError:
                raise ConfigError(f"synth option {name} must be an integer") from None
        src = SynthSource(**opts)
        if min(src.taxis, src.points, src.hotspots) < 1:
            raise ConfigError("synth counts must be at least 1")
        return src
    raise ConfigError(f"unknown input source {spec!r}")


@dataclass
class ExperimentConfig:
    """One run. Durations are seconds of virtual time unless suffixed ``_us``.

    ``fail_window`` and ``downtime`` are given on the original time base and
    multiplied by ``time_scale``.
    """

    mode: str = "reactive"
    tasks: int = 3
    pool_min: int = 3
    pool_max: int = 12
    partitions: int = 3
    batch_n: int = 64
    failure_prob: float = 0.0
    fail_window: float = 600.0
    downtime: float = 300.0
    time_scale: float = 1 / 20
    nodes: int = 3
    cores_per_node: Optional[int] = None
    duration: float = 120.0
    seed: int = 0
    input: str = "synth:taxis=200,points=1000,hotspots=20"
    keyed: bool = True
    dmax: float = 0.01
    macro_k: int = 10
    macro_period: float = 10.0
    deterministic: bool = True
    measured_scale: float = 1.0
    quiesce_grace: float = 0.0
    # service times
    consume_us: int = 200
    publish_us: int = 50
    replay_us: int = 2
    process_base_us: int = 8_000
    process_per_cluster_us: float = 1.0
    macro_fold_us: int = 500
    # reactive services
    heartbeat_interval_us: int = 100_000
    miss_threshold: int = 3
    evaluation_period_us: int = 500_000
    cooldown_us: int = 1_000_000
    high_watermark: float = 50.0
    low_watermark: float = 5.0
    task_capacity: int = 1024
    poll_interval_us: int = 50_000
    session_timeout_us: int = 500_000
    merge_period_us: int = 1_000_000
    extra: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.mode not in ("liquid", "reactive"):
            raise ConfigError(f"mode must be liquid or reactive, not {self.mode!r}")
        if self.tasks < 1 or self.partitions < 1 or self.nodes < 1 or self.batch_n < 1:
            raise ConfigError("tasks, partitions, nodes and batch size must be positive")
        if not 1 <= self.pool_min <= self.pool_max:
            raise ConfigError("need 1 <= pool_min <= pool_max")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise ConfigError("failure probability must lie in [0, 1]")
        if self.duration <= 0 or self.time_scale <= 0:
            raise ConfigError("duration and time scale must be positive")
        if self.fail_window <= 0 or self.downtime < 0:
            raise ConfigError("fail window must be positive and downtime non-negative")
        if self.cores_per_node is not None and self.cores_per_node < 1:
            raise ConfigError("cores per node must be positive")
        if self.dmax <= 0 or self.macro_k < 1 or self.macro_period <= 0:
            raise ConfigError("dmax, macro k and macro period must be positive")
        if self.task_capacity <= self.batch_n:
            raise ConfigError("task mailbox capacity must exceed the batch size")
        if not 0 < self.low_watermark < self.high_watermark:
            raise ConfigError("need 0 < low watermark < high watermark")
        parse_input(self.input)
        return self

    @property
    def duration_us(self) -> int:
        return int(round(self.duration * 1_000_000))

    @property
    def horizon_s(self) -> int:
        return int(math.floor(self.duration))

    def to_dict(self) -> dict:
        return asdict(self)
