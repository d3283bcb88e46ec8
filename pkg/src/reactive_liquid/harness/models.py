"""Analytic completion-time models for the two architectures."""

from __future__ import annotations

from dataclasses import dataclass, field


class ModelDomainError(ValueError):
    pass


def model_completion_liquid(n: int, t_c: float, t_p: float, i: int) -> float:
    """Batch of ``n`` consumed first, then message ``i`` waits for the ``i``
    processing steps up to and including its own."""
    if n < 1 or not 1 <= i <= n:
        raise ModelDomainError(f"need n >= 1 and 1 <= i <= n, got n={n}, i={i}")
    if t_c < 0 or t_p < 0:
        raise ModelDomainError("times must be non-negative")
    return n * t_c + i * t_p


def model_completion_reactive(n: int, t_c: float, t_w: float, t_p: float) -> float:
    """Batch consumption, then the message's own queue wait and processing."""
    if n < 0 or t_c < 0 or t_w < 0 or t_p < 0:
        raise ModelDomainError("all arguments must be non-negative")
    return n * t_c + t_w + t_p


@dataclass
class CompletionModel:
    n: int
    t_c: float
    t_p: float
    t_w: list[float] = field(default_factory=list)

    def liquid(self, i: int) -> float:
        return model_completion_liquid(self.n, self.t_c, self.t_p, i)

    def reactive(self, idx: int) -> float:
        return model_completion_reactive(self.n, self.t_c, self.t_w[idx], self.t_p)
