"""Reactive processing layer: elastic scaling, supervision, state management."""

from .scaling import ElasticPoolConfig, ElasticScaler, ScalingDecision, evaluate_scaling
from .state import CrdtMap, EventStore, EventStream, OwnershipError, crdt_merge, crdt_put
from .supervision import (
    SupervisionRecord,
    detect_failures,
    record_heartbeat,
    restart_backoff,
)

__all__ = [
    "CrdtMap",
    "ElasticPoolConfig",
    "ElasticScaler",
    "EventStore",
    "EventStream",
    "OwnershipError",
    "ScalingDecision",
    "SupervisionRecord",
    "crdt_merge",
    "crdt_put",
    "detect_failures",
    "evaluate_scaling",
    "record_heartbeat",
    "restart_backoff",
]
