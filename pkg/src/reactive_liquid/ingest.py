"""T-Drive trajectory parsing, a seeded synthetic generator, and broker loading."""

from __future__ import annotations

import calendar
import time
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .broker import Broker
from .tcmm import TrajectoryPoint

BEIJING_LON = (115.5, 117.5)
BEIJING_LAT = (39.0, 41.0)
SYNTH_EPOCH = calendar.timegm((2008, 2, 2, 0, 0, 0))


class ParseError(ValueError):
    kind = "parse"


class FieldCountError(ParseError):
    kind = "field_count"


class ValueFormatError(ParseError):
    kind = "value"


class RangeError(ParseError):
    kind = "range"


def parse_line(line: str) -> TrajectoryPoint:
    """Parse ``taxi_id,YYYY-MM-DD HH:MM:SS,lon,lat``.

    Timestamps are read as UTC and returned as epoch seconds. Every failure is
    raised as a :class:`ParseError` subclass.
    """
    fields = line.strip().split(",")
    if len(fields) != 4:
        raise FieldCountError(f"expected 4 fields, got {len(fields)}")
    try:
        taxi = int(fields[0])
        stamp = datetime.strptime(fields[1].strip(), "%Y-%m-%d %H:%M:%S")
        lon = float(fields[2])
        lat = float(fields[3])
    except ValueError as exc:
        raise ValueFormatError(str(exc)) from None
    if not (-180.0 <= lon <= 180.0) or not (-90.0 <= lat <= 90.0):
        raise RangeError(f"coordinate out of range: {lon},{lat}")
    return TrajectoryPoint(taxi, float(calendar.timegm(stamp.timetuple())), lon, lat)


@dataclass
class IngestReport:
    published: int = 0
    malformed: int = 0


def point_key(p: TrajectoryPoint) -> bytes:
    return str(p.taxi_id).encode()


def publish_points(broker: Broker, topic: str, points: Iterable[TrajectoryPoint],
                   keyed: bool = True, producer_id: str = "ingest") -> int:
    count = 0
    for p in points:
        broker.publish(topic, point_key(p) if keyed else None, p.encode(), producer_id)
        count += 1
    return count


def load_dataset(path: str, broker: Broker, topic: str, rate: Optional[float] = None,
                 keyed: bool = True, sleep: Callable[[float], None] = time.sleep) -> IngestReport:
    """Publish every valid line of a T-Drive file to ``topic``.

    ``rate`` throttles to that many messages per second; ``None`` is unthrottled.
    """
    report = IngestReport()
    start = time.monotonic()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                p = parse_line(line)
            except ParseError:
                report.malformed += 1
                continue
            broker.publish(topic, point_key(p) if keyed else None, p.encode(), "ingest")
            report.published += 1
            if rate:
                ahead = report.published / rate - (time.monotonic() - start)
                if ahead > 0:
                    sleep(ahead)
    return report


def synth_hotspots(seed: int, n_hotspots: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    lon = rng.uniform(*BEIJING_LON, size=n_hotspots)
    lat = rng.uniform(*BEIJING_LAT, size=n_hotspots)
    return np.column_stack([lon, lat])


def synth_trajectories(seed: int, n_taxis: int, points_per_taxi: int, n_hotspots: int,
                       sigma: float = 0.005, dwell_mean: float = 8.0,
                       transit_steps: tuple[int, int] = (3, 10)) -> list[TrajectoryPoint]:
    """Seeded taxi walks between hotspots, ordered by (t, taxi_id).

    Each taxi dwells at a hotspot for a geometric number of fixes, then drives
    towards another hotspot in a few interpolated fixes; every fix carries
    Gaussian jitter of ``sigma`` degrees. Per-taxi timestamps strictly increase.
    """
    if min(n_taxis, points_per_taxi, n_hotspots) < 1:
        raise ValueError("counts must be at least 1")
    hotspots = synth_hotspots(seed, n_hotspots)
    rng = np.random.default_rng([seed, 1])
    out: list[TrajectoryPoint] = []
    for taxi in range(n_taxis):
        xs = np.empty((points_per_taxi, 2))
        here = int(rng.integers(n_hotspots))
        i = 0
        while i < points_per_taxi:
            dwell = int(rng.geometric(1.0 / dwell_mean))
            for _ in range(dwell):
                if i == points_per_taxi:
                    break
                xs[i] = hotspots[here]
                i += 1
            nxt = int(rng.integers(n_hotspots))
            if nxt == here and n_hotspots > 1:
                nxt = (nxt + 1) % n_hotspots
            steps = int(rng.integers(transit_steps[0], transit_steps[1] + 1))
            for s in range(1, steps + 1):
                if i == points_per_taxi:
                    break
                f = s / (steps + 1)
                xs[i] = hotspots[here] * (1 - f) + hotspots[nxt] * f
                i += 1
            here = nxt
        xs += rng.normal(0.0, sigma, size=xs.shape)
        xs[:, 0] = np.clip(xs[:, 0], -180.0, 180.0)
        xs[:, 1] = np.clip(xs[:, 1], -90.0, 90.0)
        t0 = SYNTH_EPOCH + float(rng.integers(0, 3600))
        ts = t0 + np.cumsum(rng.integers(30, 301, size=points_per_taxi)).astype(float)
        out.extend(TrajectoryPoint(taxi, float(t), float(x), float(y))
                   for t, (x, y) in zip(ts, xs))
    out.sort(key=lambda p: (p.t, p.taxi_id))
    return out


def iter_tdrive(path: str) -> Iterator[TrajectoryPoint]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    yield parse_line(line)
                except ParseError:
                    continue
