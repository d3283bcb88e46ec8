"""Incremental trajectory clustering: micro-clusters over temporal cluster
features, and periodic weighted k-means macro-clustering on top of them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Union

import numpy as np

from .messages import Output, StreamMessage
from .processing import Job, JobSpec, LiquidMode, Platform, ReactiveMode, start_job
from .reactive.state import CrdtMap, crdt_put
from .runtime import Component

RADIUS_EPS = 1e-9
_POINT = struct.Struct("<qddd")


@dataclass(frozen=True)
class TrajectoryPoint:
    taxi_id: int
    t: float
    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (-180.0 <= self.lon <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"coordinate out of range: lon={self.lon} lat={self.lat}")

    def encode(self) -> bytes:
        return _POINT.pack(self.taxi_id, self.t, self.lon, self.lat)

    @classmethod
    def decode(cls, data: bytes) -> "TrajectoryPoint":
        return cls(*_POINT.unpack(data))


ClusterId = tuple[str, int]


@dataclass(frozen=True)
class MicroClusterCF:
    id: ClusterId
    n: int
    ls: tuple[float, float]
    ss: float
    t_start: float
    t_end: float

    @classmethod
    def from_point(cls, cid: ClusterId, p: TrajectoryPoint) -> "MicroClusterCF":
        return cls(cid, 1, (p.lon, p.lat), p.lon * p.lon + p.lat * p.lat, p.t, p.t)

    @property
    def center(self) -> tuple[float, float]:
        return (self.ls[0] / self.n, self.ls[1] / self.n)

    @property
    def radius_sq(self) -> float:
        cx, cy = self.center
        return self.ss / self.n - (cx * cx + cy * cy)

    @property
    def radius(self) -> float:
        return math.sqrt(max(0.0, self.radius_sq))


def cf_add(cf: MicroClusterCF, p: TrajectoryPoint) -> MicroClusterCF:
    return MicroClusterCF(
        cf.id,
        cf.n + 1,
        (cf.ls[0] + p.lon, cf.ls[1] + p.lat),
        cf.ss + p.lon * p.lon + p.lat * p.lat,
        cf.t_start,
        max(cf.t_end, p.t),
    )


@dataclass(frozen=True)
class Created:
    cf: MicroClusterCF


@dataclass(frozen=True)
class Merged:
    id: ClusterId
    point: TrajectoryPoint
    cf: MicroClusterCF


MicroDelta = Union[Created, Merged]


class MicroClusterSet:
    """Micro-clusters of one origin with a vectorised nearest-centre index.

    Index order equals creation order, so the lowest index among equally near
    clusters is also the lowest cluster id.
    """

    def __init__(self, origin: str = "ref") -> None:
        self.origin = origin
        self.next_local = 0
        self.clusters: list[MicroClusterCF] = []
        self._pos: dict[ClusterId, int] = {}
        self._cx = np.empty(64)
        self._cy = np.empty(64)

    def __len__(self) -> int:
        return len(self.clusters)

    def copy(self) -> "MicroClusterSet":
        out = MicroClusterSet(self.origin)
        out.next_local = self.next_local
        out.clusters = list(self.clusters)
        out._pos = dict(self._pos)
        out._cx = self._cx.copy()
        out._cy = self._cy.copy()
        return out

    def nearest(self, lon: float, lat: float) -> tuple[int, float]:
        n = len(self.clusters)
        if n == 0:
            return -1, math.inf
        dx = self._cx[:n] - lon
        dy = self._cy[:n] - lat
        d2 = dx * dx + dy * dy
        i = int(np.argmin(d2))
        return i, math.sqrt(float(d2[i]))

    def plan(self, p: TrajectoryPoint, d_max: float) -> MicroDelta:
        i, dist = self.nearest(p.lon, p.lat)
        if i >= 0 and dist <= d_max:
            cf = self.clusters[i]
            return Merged(cf.id, p, cf_add(cf, p))
        return Created(MicroClusterCF.from_point((self.origin, self.next_local), p))

    def apply(self, delta: MicroDelta) -> None:
        if isinstance(delta, Created):
            cf = delta.cf
            if cf.id in self._pos:
                raise ValueError(f"duplicate micro-cluster id {cf.id}")
            i = len(self.clusters)
            if i == len(self._cx):
                self._cx = np.concatenate([self._cx, np.empty(i)])
                self._cy = np.concatenate([self._cy, np.empty(i)])
            self.clusters.append(cf)
            self._pos[cf.id] = i
            if cf.id[0] == self.origin:
                self.next_local = max(self.next_local, cf.id[1] + 1)
        else:
            i = self._pos[delta.id]
            cf = delta.cf
            self.clusters[i] = cf
        cx, cy = cf.center
        self._cx[i] = cx
        self._cy[i] = cy

    def total_points(self) -> int:
        return sum(cf.n for cf in self.clusters)


def micro_update(clusters: MicroClusterSet, p: TrajectoryPoint,
                 d_max: float) -> tuple[MicroClusterSet, MicroDelta]:
    """Pure merge-or-create step; ``clusters`` is left untouched."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    delta = clusters.plan(p, d_max)
    out = clusters.copy()
    out.apply(delta)
    return out, delta


def fold_delta(clusters: MicroClusterSet, delta: MicroDelta) -> MicroClusterSet:
    clusters.apply(delta)
    return clusters


# MicroDelta wire format: u8 tag, then fields in declaration order.
def _pack_id(cid: ClusterId) -> bytes:
    origin = cid[0].encode()
    return struct.pack("<I", len(origin)) + origin + struct.pack("<Q", cid[1])


def _pack_cf(cf: MicroClusterCF) -> bytes:
    return _pack_id(cf.id) + struct.pack("<Qddddd", cf.n, cf.ls[0], cf.ls[1], cf.ss,
                                         cf.t_start, cf.t_end)


def _unpack_id(buf: bytes, pos: int) -> tuple[ClusterId, int]:
    (ln,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    origin = buf[pos:pos + ln].decode()
    pos += ln
    (local,) = struct.unpack_from("<Q", buf, pos)
    return (origin, local), pos + 8


def _unpack_cf(buf: bytes, pos: int) -> tuple[MicroClusterCF, int]:
    cid, pos = _unpack_id(buf, pos)
    n, lx, ly, ss, t0, t1 = struct.unpack_from("<Qddddd", buf, pos)
    return MicroClusterCF(cid, n, (lx, ly), ss, t0, t1), pos + 48


def encode_delta(delta: MicroDelta) -> bytes:
    if isinstance(delta, Created):
        return b"\x00" + _pack_cf(delta.cf)
    return b"\x01" + _pack_id(delta.id) + delta.point.encode() + _pack_cf(delta.cf)


def decode_delta(buf: bytes) -> MicroDelta:
    tag = buf[0]
    if tag == 0:
        cf, _ = _unpack_cf(buf, 1)
        return Created(cf)
    if tag == 1:
        cid, pos = _unpack_id(buf, 1)
        point = TrajectoryPoint.decode(buf[pos:pos + _POINT.size])
        cf, _ = _unpack_cf(buf, pos + _POINT.size)
        return Merged(cid, point, cf)
    raise ValueError(f"unknown delta tag {tag}")


# macro-clustering

@dataclass
class MacroClusters:
    centers: list[tuple[float, float]]
    assignment: dict[ClusterId, int]
    epoch: int = 0
    wcss: float = 0.0
    wcss_trace: list[float] = field(default_factory=list)


def _assign(px: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((px[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(px)), labels]


def weighted_kmeans(points: np.ndarray, weights: np.ndarray, k: int, max_iters: int,
                    seed: int, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Weighted Lloyd iterations seeded with ``k`` distinct input points.

    Returns ``(centers, labels, trace)`` where ``trace`` holds the weighted
    within-cluster sum of squares after every assignment step.
    """
    n = len(points)
    k = max(1, min(k, n))
    rng = np.random.default_rng(seed)
    centers = points[np.sort(rng.choice(n, size=k, replace=False))].astype(float)
    trace: list[float] = []
    labels = np.zeros(n, dtype=int)
    for _ in range(max(1, max_iters)):
        labels, d2 = _assign(points, centers)
        trace.append(float((weights * d2).sum()))
        new = centers.copy()
        for j in range(k):
            mask = labels == j
            w = weights[mask]
            if w.sum() > 0:
                new[j] = (points[mask] * w[:, None]).sum(axis=0) / w.sum()
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    labels, d2 = _assign(points, centers)
    trace.append(float((weights * d2).sum()))
    return centers, labels, trace


def macro_cluster(micro: Iterable[MicroClusterCF], k: int, max_iters: int = 100,
                  seed: int = 0, epoch: int = 0) -> MacroClusters:
    cfs = sorted(micro, key=lambda cf: cf.id)
    if k < 1:
        raise ValueError("k must be at least 1")
    if not cfs:
        raise ValueError("macro clustering needs at least one micro-cluster")
    pts = np.array([cf.center for cf in cfs], dtype=float)
    w = np.array([cf.n for cf in cfs], dtype=float)
    centers, labels, trace = weighted_kmeans(pts, w, k, max_iters, seed)
    return MacroClusters(
        centers=[(float(x), float(y)) for x, y in centers],
        assignment={cf.id: int(l) for cf, l in zip(cfs, labels)},
        epoch=epoch,
        wcss=trace[-1],
        wcss_trace=trace,
    )


def encode_macro(m: MacroClusters) -> bytes:
    head = struct.pack("<QI", m.epoch, len(m.centers))
    body = b"".join(struct.pack("<dd", x, y) for x, y in m.centers)
    return head + body + struct.pack("<d", m.wcss)


def merged_micro_view(cfs: Iterable[MicroClusterCF]) -> dict[ClusterId, MicroClusterCF]:
    """Latest summary per micro-cluster id; counts only grow, so max N wins."""
    view: dict[ClusterId, MicroClusterCF] = {}
    for cf in cfs:
        cur = view.get(cf.id)
        if cur is None or cf.n > cur.n:
            view[cf.id] = cf
    return view


def reference_micro_clustering(points: Iterable[TrajectoryPoint], d_max: float,
                               origin: str = "ref") -> list[MicroClusterCF]:
    """Brute-force single-threaded merge-or-create, used as a test oracle."""
    clusters: list[MicroClusterCF] = []
    for p in points:
        best, best_d = -1, math.inf
        for i, cf in enumerate(clusters):
            cx, cy = cf.ls[0] / cf.n, cf.ls[1] / cf.n
            dx, dy = cx - p.lon, cy - p.lat
            d = math.sqrt(dx * dx + dy * dy)
            if d < best_d:
                best, best_d = i, d
        if best >= 0 and best_d <= d_max:
            clusters[best] = cf_add(clusters[best], p)
        else:
            clusters.append(MicroClusterCF.from_point((origin, len(clusters)), p))
    return clusters


# the two chained jobs

TRAJECTORIES = "trajectories"
MICRO_DELTAS = "micro-deltas"
MACRO_DELTAS = "macro-deltas"


@dataclass
class TcmmParams:
    d_max: float = 0.01
    macro_k: int = 10
    macro_period: int = 10_000_000
    macro_iters: int = 50
    seed: int = 0
    base_us: int = 8_000
    per_cluster_us: float = 1.0
    macro_fold_us: int = 500


@dataclass
class MicroState:
    clusters: MicroClusterSet
    replica: CrdtMap


class MicroLogic:
    """Merge-or-create per trajectory point; one CRDT origin per task."""

    def __init__(self, params: TcmmParams, output: str = MICRO_DELTAS) -> None:
        self.params = params
        self.output = output

    def initial_state(self, origin: str) -> MicroState:
        return MicroState(MicroClusterSet(origin), CrdtMap(origin))

    def handle(self, state: MicroState, msg: StreamMessage) -> tuple[list[Output], list[Any]]:
        p = TrajectoryPoint.decode(msg.payload)
        delta = state.clusters.plan(p, self.params.d_max)
        key = state.clusters.origin.encode()
        return [Output(self.output, key, encode_delta(delta))], [delta]

    def fold(self, state: MicroState, delta: MicroDelta) -> MicroState:
        state.clusters.apply(delta)
        cf = delta.cf
        crdt_put(state.replica, state.replica.replica_id, cf.id, cf)
        return state

    def cost_us(self, state: MicroState, msg: StreamMessage) -> int:
        p = self.params
        return int(p.base_us + p.per_cluster_us * len(state.clusters))

    def replica(self, state: MicroState) -> CrdtMap:
        return state.replica


class MacroLogic:
    """Folds micro deltas into a replica holding the largest summary per id."""

    def __init__(self, params: TcmmParams) -> None:
        self.params = params

    def initial_state(self, origin: str) -> CrdtMap:
        return CrdtMap(origin)

    def handle(self, state: CrdtMap, msg: StreamMessage) -> tuple[list[Output], list[Any]]:
        cf = decode_delta(msg.payload).cf
        cur = state.get(state.replica_id, cf.id)
        if cur is not None and cur.n >= cf.n:
            return [], []
        return [], [cf]

    def fold(self, state: CrdtMap, cf: MicroClusterCF) -> CrdtMap:
        crdt_put(state, state.replica_id, cf.id, cf)
        return state

    def cost_us(self, state: CrdtMap, msg: StreamMessage) -> int:
        return self.params.macro_fold_us

    def replica(self, state: CrdtMap) -> CrdtMap:
        return state


class MacroEmitter(Component):
    """Periodically macro-clusters the macro job's merged micro view."""

    def __init__(self, job: Job, params: TcmmParams, output: str = MACRO_DELTAS) -> None:
        super().__init__(job.rt, f"macro-emitter:{job.spec.job_id}")
        self.job = job
        self.params = params
        self.output = output
        self.epoch = 0
        self.history: list[MacroClusters] = []
        self._last: Optional[tuple[int, int]] = None

    def on_start(self) -> None:
        self.after(self.params.macro_period, self._tick)

    def _tick(self) -> None:
        self.emit_now()
        self.after(self.params.macro_period, self._tick)

    def emit_now(self) -> Optional[MacroClusters]:
        shared = self.job.collect_state()
        view = merged_micro_view(cf for _, _, cf in shared.values())
        if not view:
            return None
        stamp = (len(view), sum(cf.n for cf in view.values()))
        if stamp == self._last:
            return None
        self._last = stamp
        p = self.params
        m = macro_cluster(view.values(), p.macro_k, p.macro_iters, p.seed + self.epoch, self.epoch)
        self.rt.broker.publish(self.output, None, encode_macro(m), self.name)
        self.history.append(m)
        self.rt.log("macro", epoch=self.epoch, micro=len(view), wcss=m.wcss)
        self.epoch += 1
        return m


@dataclass
class TcmmJobs:
    micro: JobSpec
    macro: JobSpec
    params: TcmmParams


def run_tcmm_jobs(mode: Union[LiquidMode, ReactiveMode], params: TcmmParams,
                  macro_mode: Optional[Union[LiquidMode, ReactiveMode]] = None,
                  batch_n: int = 64) -> TcmmJobs:
    """Job specs for micro-clustering (trajectories to micro deltas) and
    macro-clustering (micro deltas, periodically emitting macro epochs)."""
    micro = JobSpec("micro", TRAJECTORIES, MICRO_DELTAS, MicroLogic(params), mode,
                    stateful=True, batch_n=batch_n, record_completions=True)
    macro = JobSpec("macro", MICRO_DELTAS, MACRO_DELTAS, MacroLogic(params),
                    macro_mode or mode, stateful=True, batch_n=batch_n)
    return TcmmJobs(micro, macro, params)


def start_tcmm(platform: Platform, jobs: TcmmJobs) -> tuple[Job, Job, MacroEmitter]:
    micro = start_job(platform, jobs.micro)
    macro = start_job(platform, jobs.macro)
    emitter = MacroEmitter(macro, jobs.params)
    emitter.launch(platform.rt.control)
    return micro, macro, emitter
