"""Boot a full run: broker, nodes, TCMM jobs in one mode, failures, metrics."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from ..broker import Broker
from ..ingest import iter_tdrive, publish_points, synth_trajectories
from ..processing import Job, LiquidMode, Platform, PlatformSettings, ReactiveMode
from ..reactive.scaling import ElasticPoolConfig
from ..reactive.supervisor import Supervisor
from ..runtime import CostModel, LogEvent, Runtime
from ..sim import SECOND, Scheduler
from ..tcmm import (MACRO_DELTAS, MICRO_DELTAS, TRAJECTORIES, MacroEmitter, TcmmParams,
                    run_tcmm_jobs, start_tcmm)
from ..virtual_messaging import VirtualMessagingLayer
from .config import ExperimentConfig, SynthSource, parse_input
from .failures import FailureEvent, FailurePlan, failure_ticker, install_failures
from .metrics import MetricsCollector, RunMetrics, Sample, build_metrics


@dataclass
class RecoveryCheck:
    component: str
    killed_at: int
    restarted_at: Optional[int]
    bound: Optional[int]
    eligible: bool

    @property
    def ok(self) -> bool:
        return (not self.eligible or (self.restarted_at is not None
                                      and self.restarted_at - self.killed_at <= self.bound))


@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: RunMetrics
    rt: Runtime
    platform: Platform
    micro: Job
    macro: Job
    emitter: MacroEmitter
    schedule: list[FailureEvent]
    preloaded: int
    supervisor: Supervisor
    recovery: list[RecoveryCheck] = field(default_factory=list)


def load_points(cfg: ExperimentConfig):
    src = parse_input(cfg.input)
    if isinstance(src, SynthSource):
        seed = cfg.seed if src.seed is None else src.seed
        return synth_trajectories(seed, src.taxis, src.points, src.hotspots)
    return list(iter_tdrive(src.path))


def pool_config(cfg: ExperimentConfig) -> ElasticPoolConfig:
    return ElasticPoolConfig(cfg.pool_min, cfg.pool_max, cfg.high_watermark, cfg.low_watermark,
                             cfg.evaluation_period_us, cfg.cooldown_us)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   figures: bool = False, points=None,
                   schedule: Optional[list[FailureEvent]] = None) -> RunResult:
    """Run one experiment to its horizon.

    ``schedule`` replaces the seeded failure plan with scripted events.
    """
    cfg.validate()
    sched = Scheduler(seed=cfg.seed)
    costs = CostModel(cfg.consume_us, cfg.publish_us, cfg.replay_us,
                      measured=not cfg.deterministic, measured_scale=cfg.measured_scale)
    broker = Broker(clock=sched.clock)
    rt = Runtime(sched, cfg.nodes, cfg.cores_per_node, costs, broker)
    broker.create_topic(TRAJECTORIES, cfg.partitions)
    broker.create_topic(MICRO_DELTAS, cfg.partitions)
    broker.create_topic(MACRO_DELTAS, 1)
    if points is None:
        points = load_points(cfg)
    preloaded = publish_points(broker, TRAJECTORIES, points, keyed=cfg.keyed)

    supervisor = Supervisor(rt, cfg.heartbeat_interval_us, cfg.miss_threshold)
    supervisor.launch(rt.control)
    rt.supervisor = supervisor
    metrics = MetricsCollector(rt)
    metrics.launch(rt.control)
    vml = None
    if cfg.mode == "reactive":
        producers = ElasticPoolConfig(1, max(3, cfg.nodes), 200.0, 10.0,
                                      cfg.evaluation_period_us, cfg.cooldown_us)
        vml = VirtualMessagingLayer(rt, supervisor, producers, cfg.poll_interval_us,
                                    cfg.task_capacity, cfg.batch_n)
        mode = ReactiveMode(pool_config(cfg))
    else:
        mode = LiquidMode(cfg.tasks)
    settings = PlatformSettings(poll_interval=cfg.poll_interval_us,
                                merge_period=cfg.merge_period_us,
                                session_timeout=cfg.session_timeout_us,
                                task_capacity=cfg.task_capacity)
    platform = Platform(rt, supervisor, vml=vml, metrics=metrics, settings=settings)
    params = TcmmParams(d_max=cfg.dmax, macro_k=cfg.macro_k,
                        macro_period=int(round(cfg.macro_period * SECOND)), seed=cfg.seed,
                        base_us=cfg.process_base_us, per_cluster_us=cfg.process_per_cluster_us,
                        macro_fold_us=cfg.macro_fold_us)
    jobs = run_tcmm_jobs(mode, params, batch_n=cfg.batch_n)
    micro, macro, emitter = start_tcmm(platform, jobs)

    plan = FailurePlan(cfg.failure_prob, cfg.fail_window, cfg.downtime, cfg.seed, cfg.time_scale)
    horizon_us = cfg.duration_us
    if schedule is None:
        schedule = failure_ticker(plan, [n.node_id for n in rt.worker_nodes()], horizon_us)
    install_failures(rt, schedule)

    samples: list[Sample] = []
    horizon_s = cfg.horizon_s

    def sample() -> bool:
        k = len(samples) + 1
        samples.append(Sample(k, micro.task_count(), micro.active_tasks(),
                              rt.healthy_worker_count()))
        return k < horizon_s

    if horizon_s >= 1:
        sched.every(SECOND, sample)
    sched.run(until=horizon_us)
    grace_end = horizon_us + int(round(cfg.quiesce_grace * SECOND))
    while sched.now < grace_end and not (micro.is_quiescent() and macro.is_quiescent()):
        sched.run(until=min(grace_end, sched.now + SECOND))

    m = build_metrics(metrics.drain(), horizon_s, samples)
    recovery = recovery_checks(rt.events, supervisor)
    m.recovery_us = [c.restarted_at - c.killed_at for c in recovery
                     if c.restarted_at is not None]
    m.summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "preloaded": preloaded,
        "node_kills": sum(1 for e in schedule if e.action == "kill" and e.t < horizon_us),
        "macro_epochs": emitter.epoch,
        "micro_clusters": _micro_cluster_count(micro),
        "events": sched.events_run,
        "end_us": sched.now,
    }
    result = RunResult(cfg, m, rt, platform, micro, macro, emitter, schedule, preloaded,
                       supervisor, recovery)
    if out_dir is not None:
        write_run(result, out_dir, figures)
    return result


def _micro_cluster_count(job: Job) -> int:
    shared = job.collect_state()
    return len(shared.entries)


def write_run(result: RunResult, out_dir: str, figures: bool = False) -> list[str]:
    from .reports import emit_reports
    paths = emit_reports(result.metrics, out_dir)
    cfg_path = os.path.join(out_dir, "config.json")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump(result.config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(cfg_path)
    if figures:
        from .figures import run_figures
        paths.extend(run_figures(result.metrics, out_dir, result.config.mode))
    return paths


def _up_intervals(events: list[LogEvent], nodes: list[str]) -> dict[str, list[tuple[int, int]]]:
    inf = 1 << 62
    down_since: dict[str, int] = {}
    downs: dict[str, list[tuple[int, int]]] = {n: [] for n in nodes}
    for e in events:
        if e.kind == "node_down":
            down_since[e.fields["node"]] = e.t
        elif e.kind == "node_up":
            n = e.fields["node"]
            downs[n].append((down_since.pop(n), e.t))
    for n, t in down_since.items():
        downs[n].append((t, inf))
    return downs


def _healthy_throughout(downs, start: int, end: int) -> bool:
    """True if some node has no downtime overlapping ``[start, end]``."""
    for spans in downs.values():
        if all(b <= start or a > end for a, b in spans):
            return True
    return False


def recovery_checks(events: list[LogEvent], supervisor: Supervisor) -> list[RecoveryCheck]:
    """Kill-to-restart intervals for every supervised component lost with its node.

    A kill is eligible when at least one worker node stayed up from the kill
    until the bound expired; the bound is the heartbeat timeout plus one
    detection cycle plus the backoff that the supervisor applied.
    """
    nodes = sorted({e.fields["node"] for e in events if e.kind in ("node_down", "node_up")})
    downs = _up_intervals(events, nodes)
    base = supervisor.heartbeat_timeout + supervisor.detection_period
    pending: dict[str, tuple[int, Optional[int]]] = {}
    checks: list[RecoveryCheck] = []
    for e in events:
        name = e.fields.get("component")
        if e.kind == "node_down":
            for comp in e.fields["components"]:
                if comp in supervisor.entries:
                    pending[comp] = (e.t, None)
        elif e.kind == "restart_scheduled" and name in pending:
            killed, _ = pending[name]
            pending[name] = (killed, e.fields["delay"])
        elif e.kind == "restarted" and name in pending:
            killed, delay = pending.pop(name)
            bound = base + (delay or 0)
            eligible = delay is not None and _healthy_throughout(downs, killed, killed + bound)
            checks.append(RecoveryCheck(name, killed, e.t, bound, eligible))
    for name, (killed, delay) in pending.items():
        bound = base + (delay or 0)
        eligible = _healthy_throughout(downs, killed, killed + bound)
        checks.append(RecoveryCheck(name, killed, None, bound, eligible))
    return checks
