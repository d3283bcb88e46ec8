"""Paired comparison of two runs' cumulative series with a least-squares line."""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import RunMetrics


class ComparisonError(ValueError):
    pass


@dataclass
class ComparisonReport:
    t: list[int]
    a: list[int]
    b: list[int]
    slope: float
    intercept: float
    r_squared: float

    @property
    def verdict(self) -> str:
        if self.slope > 1:
            return "b above y=x"
        if self.slope < 1:
            return "b below y=x"
        return "on y=x"


def fit_line(x: list[float], y: list[float]) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((v - mx) ** 2 for v in x)
    sxy = sum((u - mx) * (v - my) for u, v in zip(x, y))
    if sxx == 0:
        raise ComparisonError("x values are constant, no trendline")
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = sum((v - (slope * u + intercept)) ** 2 for u, v in zip(x, y))
    ss_tot = sum((v - my) ** 2 for v in y)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def compare_runs(a: RunMetrics, b: RunMetrics) -> ComparisonReport:
    """Pair cumulative counts on the shared one-second grid (x from ``a``)."""
    if a.t != b.t:
        raise ComparisonError("runs were sampled on different grids")
    if len(a.t) < 3:
        raise ComparisonError("need at least 3 paired samples")
    slope, intercept, r2 = fit_line([float(v) for v in a.cumulative],
                                    [float(v) for v in b.cumulative])
    return ComparisonReport(list(a.t), list(a.cumulative), list(b.cumulative),
                            slope, intercept, r2)
