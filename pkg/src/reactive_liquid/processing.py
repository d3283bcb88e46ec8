"""Processing layer: jobs, tasks and the load-balancing task pool.

Two execution modes share the task logic:

* ``LiquidMode`` - a fixed set of tasks joins the broker consumer group of the
  input topic directly and alternates fetch-a-batch / process-the-batch /
  commit. Tasks are bound to their home node and return only with it.
* ``ReactiveMode`` - a virtual consumer group feeds an elastic, supervised
  task pool; tasks publish through the virtual producer group.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Union

from .broker import Broker
from .mailbox import Envelope, Kind, SendResult
from .messages import CompletionRecord, Output, StreamMessage, message_id
from .reactive.scaling import ElasticPoolConfig, ElasticScaler
from .reactive.state import CrdtMap, EventStore, crdt_merge_into
from .reactive.supervisor import Supervisor
from .runtime import Component, Node, Runtime, wall_cost
from .virtual_messaging import NO_WORKERS, VirtualMessagingLayer, subscribe_job


class JobError(Exception):
    pass


class JobLogic(Protocol):
    """Per-message job behaviour.

    ``handle`` must not mutate ``state``: it returns the outputs to publish
    and the state-change events, which the task folds in with ``fold`` once
    processing completes.
    """

    def initial_state(self, origin: str) -> Any: ...

    def handle(self, state: Any, msg: StreamMessage) -> tuple[list[Output], list[Any]]: ...

    def fold(self, state: Any, event: Any) -> Any: ...

    def cost_us(self, state: Any, msg: StreamMessage) -> int: ...

    def replica(self, state: Any) -> Optional[CrdtMap]: ...


@dataclass(frozen=True)
class LiquidMode:
    tasks: int

    def __post_init__(self) -> None:
        if self.tasks < 1:
            raise JobError("a liquid job needs at least one task")


@dataclass(frozen=True)
class ReactiveMode:
    pool: ElasticPoolConfig
    consumers: Optional[int] = None


@dataclass
class JobSpec:
    job_id: str
    input: str
    output: Optional[str]
    logic: Any
    mode: Union[LiquidMode, ReactiveMode]
    stateful: bool = True
    batch_n: int = 64
    record_completions: bool = False

    def __post_init__(self) -> None:
        if self.output is not None and self.input == self.output:
            raise JobError(f"job {self.job_id!r}: input and output topic are both {self.input!r}")
        if self.batch_n < 1:
            raise JobError("batch_n must be positive")


@dataclass
class PlatformSettings:
    poll_interval: int = 50_000
    merge_period: int = 1_000_000
    session_timeout: int = 500_000
    max_redeliveries: int = 3
    task_capacity: int = 1024
    retry_delay: Optional[int] = None


class Platform:
    """Everything a job needs at runtime."""

    def __init__(self, rt: Runtime, supervisor: Optional[Supervisor] = None,
                 store: Optional[EventStore] = None,
                 vml: Optional[VirtualMessagingLayer] = None,
                 metrics: Optional[Component] = None,
                 settings: Optional[PlatformSettings] = None) -> None:
        self.rt = rt
        self.supervisor = supervisor
        self.store = store or EventStore(clock=rt.sched.clock)
        self.vml = vml
        self.metrics = metrics
        self.settings = settings or PlatformSettings()
        self.jobs: dict[str, "Job"] = {}

    def start_job(self, spec: JobSpec) -> "Job":
        return start_job(self, spec)


class IdentityLogic:
    """Forwards every payload unchanged; counts messages as its state."""

    def __init__(self, output: Optional[str], cost_us: int = 1_000) -> None:
        self.output = output
        self.cost = cost_us

    def initial_state(self, origin: str) -> int:
        return 0

    def handle(self, state: int, msg: StreamMessage) -> tuple[list[Output], list[Any]]:
        outs = [Output(self.output, msg.key, msg.payload)] if self.output else []
        return outs, [1]

    def fold(self, state: int, event: int) -> int:
        return state + event

    def cost_us(self, state: int, msg: StreamMessage) -> int:
        return self.cost

    def replica(self, state: int) -> None:
        return None


# tasks

class _TaskBase(Component):
    """Shared state handling: event-sourced rebuild and CRDT delta sync."""

    def __init__(self, job: "Job", name: str) -> None:
        super().__init__(job.platform.rt, name)
        self.job = job
        self.spec = job.spec
        self.logic = job.spec.logic
        self.stream_id = f"{job.spec.job_id}/{name}"
        self.state: Any = None
        self.ready = False
        self.busy = False
        self.processed = 0
        self.capacity = job.platform.settings.task_capacity

    def on_start(self) -> None:
        self.ready = False
        self.busy = False
        store = self.job.platform.store
        if self.spec.stateful:
            n_events = len(store.stream(self.stream_id))
            delay = n_events * self.rt.costs.replay_us
        else:
            delay = 0
        self.after(delay, self._rebuild)

    def _rebuild(self) -> None:
        store = self.job.platform.store
        state = self.logic.initial_state(self.name)
        n = 0
        if self.spec.stateful:
            for _, event in store.iter_events(self.stream_id):
                state = self.logic.fold(state, event)
                n += 1
        self.state = state
        self.processed = n
        self.ready = True
        if n:
            self.rt.log("replayed", component=self.name, events=n)
        if self.logic.replica(self.state) is not None:
            self.after(self.job.platform.settings.merge_period, self._sync_state)
        self.on_ready()

    def on_ready(self) -> None:
        pass

    def _sync_state(self) -> None:
        self.flush_state()
        self.after(self.job.platform.settings.merge_period, self._sync_state)

    def flush_state(self) -> None:
        rep = self.logic.replica(self.state) if self.state is not None else None
        if rep is not None and rep.dirty and self.job.address is not None:
            self.send(self.job.address, Kind.CONTROL, ("state", rep.take_delta()))

    def run_logic(self, msg: StreamMessage) -> tuple[list[Output], list[Any], int]:
        costs = self.rt.costs
        if costs.measured:
            (outputs, events), cost = wall_cost(lambda: self.logic.handle(self.state, msg),
                                                costs.measured_scale)
        else:
            outputs, events = self.logic.handle(self.state, msg)
            cost = self.logic.cost_us(self.state, msg)
        return outputs, events, cost

    def commit_result(self, msg: StreamMessage, events: list[Any], t_start: int,
                      cost: int) -> None:
        if self.spec.stateful:
            store = self.job.platform.store
            for e in events:
                store.append_event(self.stream_id, e)
                self.state = self.logic.fold(self.state, e)
        self.processed += 1
        if self.spec.record_completions:
            metrics = self.job.platform.metrics
            if metrics is not None:
                rec = CompletionRecord(msg.msg_id, self.spec.job_id, self.name, msg.consume_time,
                                       self.rt.now, t_start - msg.consumed_at, cost, msg.batch_n,
                                       msg.batch_index)
                self.send(metrics.address, Kind.DATA, rec)


class Task(_TaskBase):
    """Reactive task: processes envelopes from its mailbox one at a time."""

    def on_ready(self) -> None:
        self._next()

    def on_mail(self) -> None:
        if self.ready and not self.busy:
            self._next()

    def _next(self) -> None:
        env = self.rt.mail.receive(self.address)
        if env is None:
            self.busy = False
            self.job.task_idle(self)
            return
        self.busy = True
        self.acquire_core(lambda: self._begin(env))

    def _begin(self, env: Envelope) -> None:
        seq, msg = env.body
        t_start = self.rt.now
        try:
            outputs, events, cost = self.run_logic(msg)
        except Exception as exc:  # let it crash
            self.rt.log("logic_error", component=self.name, msg=msg.msg_id, error=repr(exc))
            self.crash("logic error")
            return
        self.after(cost, self._finish, seq, msg, outputs, events, t_start, cost)

    def _finish(self, seq: int, msg: StreamMessage, outputs: list[Output], events: list[Any],
                t_start: int, cost: int) -> None:
        self.release_core()
        self.commit_result(msg, events, t_start, cost)
        if outputs:
            self.job.emit(self, outputs)
        self.send(self.job.address, Kind.CONTROL, ("ack", self.name, seq))
        self._next()


class LiquidTask(_TaskBase):
    """Liquid task: fetch up to n, process all n, commit, repeat."""

    def __init__(self, job: "LiquidJob", name: str, home: Node) -> None:
        super().__init__(job, name)
        self.home = home
        self.generation = -1
        self.partitions: list[int] = []
        self.positions: dict[int, int] = {}
        self._rr = 0
        self.batches = 0

    def on_start(self) -> None:
        self.generation = -1
        self.positions = {}
        self.rt.broker.join_group(self.job.group, self.spec.input, self.name)
        super().on_start()

    def on_ready(self) -> None:
        self._poll()

    def _refresh(self) -> None:
        broker = self.rt.broker
        a = broker.assignment(self.job.group, self.spec.input)
        if a.generation != self.generation:
            self.generation = a.generation
            self.partitions = a.partitions_of(self.name)
            self.positions = {p: broker.fetch_committed(self.job.group, self.spec.input, p)
                              for p in self.partitions}

    def fetch_batch(self) -> list:
        broker = self.rt.broker
        n = self.spec.batch_n
        parts = self.partitions
        if not parts:
            return []
        start = self._rr % len(parts)
        self._rr += 1
        order = parts[start:] + parts[:start]
        chunks = [broker.fetch(self.spec.input, p, self.positions[p], n) for p in order]
        batch = []
        i = 0
        while len(batch) < n and any(i < len(c) for c in chunks):
            for c in chunks:
                if i < len(c) and len(batch) < n:
                    batch.append(c[i])
            i += 1
        for m in batch:
            self.positions[m.partition] = m.offset + 1
        return batch

    def _poll(self) -> None:
        self._refresh()
        batch = self.fetch_batch()
        if not batch:
            self.after(self.job.platform.settings.poll_interval, self._poll)
            return
        start = self.rt.now
        self.batches += 1
        n = len(batch)
        consumed_at = start + n * self.rt.costs.consume_us
        msgs = [StreamMessage(message_id(self.spec.input, m.partition, m.offset), m.key,
                              m.payload, m.partition, m.offset, start, n, consumed_at, i + 1)
                for i, m in enumerate(batch)]
        self.after(consumed_at - start, self._process, msgs, 0)

    def _process(self, msgs: list[StreamMessage], i: int) -> None:
        self.busy = True
        self.acquire_core(lambda: self._begin(msgs, i))

    def _begin(self, msgs: list[StreamMessage], i: int) -> None:
        msg = msgs[i]
        t_start = self.rt.now
        try:
            outputs, events, cost = self.run_logic(msg)
        except Exception as exc:
            self.rt.log("logic_error", component=self.name, msg=msg.msg_id, error=repr(exc))
            self.crash("logic error")
            return
        self.after(cost, self._finish, msgs, i, outputs, events, t_start, cost)

    def _finish(self, msgs: list[StreamMessage], i: int, outputs: list[Output],
                events: list[Any], t_start: int, cost: int) -> None:
        self.release_core()
        msg = msgs[i]
        self.commit_result(msg, events, t_start, cost)
        broker = self.rt.broker
        for out in outputs:
            broker.publish(out.topic, out.key, out.payload, self.name)
        if i + 1 < len(msgs):
            self._process(msgs, i + 1)
            return
        self.busy = False
        last: dict[int, int] = {}
        for m in msgs:
            last[m.partition] = m.offset + 1
        for p, off in last.items():
            broker.commit_offset(self.job.group, self.spec.input, p, off)
        self._poll()


# jobs

class Job(Component):
    """Job manager living on the control node."""

    capacity = 1 << 22
    mail_delay = 1_000

    def __init__(self, platform: Platform, spec: JobSpec) -> None:
        super().__init__(platform.rt, f"job:{spec.job_id}")
        self.platform = platform
        self.spec = spec
        self.shared = CrdtMap(None)
        self.completed = 0

    def emit(self, task: _TaskBase, outputs: list[Output]) -> None:
        raise NotImplementedError

    def task_idle(self, task: _TaskBase) -> None:
        pass

    def handle_control(self, body: Any) -> None:
        if body[0] == "state":
            crdt_merge_into(self.shared, body[1])

    def task_count(self) -> int:
        raise NotImplementedError

    def active_tasks(self) -> int:
        raise NotImplementedError

    def all_tasks(self) -> list[_TaskBase]:
        raise NotImplementedError

    def is_quiescent(self) -> bool:
        raise NotImplementedError

    def collect_state(self) -> CrdtMap:
        """Flush every live task's pending state delta and merge it in."""
        for t in self.all_tasks():
            if t.alive and t.state is not None:
                rep = t.logic.replica(t.state)
                if rep is not None and rep.dirty:
                    crdt_merge_into(self.shared, rep.take_delta())
        self.on_mail()
        return self.shared


class TaskPool(Job):
    """Reactive job manager: elastic task set behind a least-depth dispatcher.

    Every dispatched message stays outstanding against its task until the
    task acks it; when a task fails, its outstanding messages are dispatched
    again from a backlog that takes priority over new messages.
    """

    def __init__(self, platform: Platform, spec: JobSpec) -> None:
        super().__init__(platform, spec)
        if not isinstance(spec.mode, ReactiveMode):
            raise JobError("TaskPool requires ReactiveMode")
        self.config = spec.mode.pool
        self.scaler = ElasticScaler(self.config)
        self.tasks: dict[str, Task] = {}
        self.retiring: set[str] = set()
        self.suspect: set[str] = set()
        self.outstanding: dict[str, dict[int, StreamMessage]] = {}
        self.backlog: deque[StreamMessage] = deque()
        self.redeliveries: dict[str, int] = {}
        self.poisoned: list[str] = []
        self.max_tasks_seen = 0
        self._seq = 0
        self._next_id = 0
        self._rr = 0
        self.subscription = None

    def on_start(self) -> None:
        for _ in range(self.config.min_workers):
            self._spawn()
        self.after(self.config.evaluation_period, self._evaluate)

    def _spawn(self, node: Optional[Node] = None) -> bool:
        node = node or self.rt.least_loaded()
        if node is None:
            sup = self.platform.supervisor
            self.send(sup.address, Kind.FAILURE_NOTICE, ("spawn_failed", self.spec.job_id))
            return False
        name = f"{self.spec.job_id}-t{self._next_id:03d}"
        self._next_id += 1
        task = Task(self, name)
        task.manager = self
        self.tasks[name] = task
        self.outstanding[name] = {}
        self.platform.supervisor.spawn(task, node)
        self.max_tasks_seen = max(self.max_tasks_seen, self.task_count())
        return True

    def task_count(self) -> int:
        return len(self.tasks) - len(self.retiring)

    def active_tasks(self) -> int:
        return sum(1 for t in self.tasks.values() if t.alive)

    def all_tasks(self) -> list[_TaskBase]:
        return list(self.tasks.values())

    def _routable(self) -> list[Task]:
        return [t for name, t in self.tasks.items()
                if t.alive and name not in self.retiring and name not in self.suspect]

    def _send_to_least_loaded(self, msg: StreamMessage) -> Union[SendResult, str]:
        mail = self.rt.mail
        while True:
            live = self._routable()
            if not live:
                return NO_WORKERS
            k = len(live)
            best: Optional[Task] = None
            best_depth = 0
            best_rank = 0
            for idx, t in enumerate(live):
                depth = mail.queue_depth(t.address, workload_only=True)
                rank = (idx - self._rr) % k
                if best is None or depth < best_depth or (depth == best_depth and rank < best_rank):
                    best, best_depth, best_rank = t, depth, rank
            if best_depth >= best.capacity:
                return SendResult.MAILBOX_FULL
            seq = self._seq
            res = mail.send(best.address, Envelope(Kind.DATA, (seq, msg), sender=self.address))
            if res is SendResult.DEAD_LETTER:
                self.suspect.add(best.name)
                continue
            if res is SendResult.ENQUEUED:
                self._seq += 1
                self._rr = (live.index(best) + 1) % k
                self.outstanding[best.name][seq] = msg
            return res

    def dispatch(self, msg: StreamMessage) -> Union[SendResult, str]:
        """Send ``msg`` to the live task with the fewest queued messages."""
        if self.backlog:
            self._flush_backlog()
            if self.backlog:
                return SendResult.MAILBOX_FULL if self._routable() else NO_WORKERS
        return self._send_to_least_loaded(msg)

    def _flush_backlog(self) -> None:
        while self.backlog:
            res = self._send_to_least_loaded(self.backlog[0])
            if res is not SendResult.ENQUEUED:
                return
            self.backlog.popleft()

    def emit(self, task: _TaskBase, outputs: list[Output]) -> None:
        vml = self.platform.vml
        by_topic: dict[str, list[Output]] = {}
        for out in outputs:
            by_topic.setdefault(out.topic, []).append(out)
        for topic, outs in by_topic.items():
            group = vml.vtopic(topic).producer_group
            task.send(group.address, Kind.DATA, outs)

    def task_idle(self, task: _TaskBase) -> None:
        if task.name in self.retiring:
            self._maybe_retire(task.name)

    def on_mail(self) -> None:
        mail = self.rt.mail
        while True:
            env = mail.receive(self.address)
            if env is None:
                break
            body = env.body
            if env.kind is Kind.FAILURE_NOTICE:
                self._task_failed(body)
            elif body[0] == "ack":
                pend = self.outstanding.get(body[1])
                if pend is not None:
                    pend.pop(body[2], None)
                self.completed += 1
            elif body[0] == "restarted":
                self.suspect.discard(body[1])
            else:
                self.handle_control(body)
        if self.backlog:
            self._flush_backlog()
        for name in sorted(self.retiring):
            self._maybe_retire(name)

    def _task_failed(self, name: str) -> None:
        self.suspect.add(name)
        pend = self.outstanding.get(name)
        if not pend:
            return
        limit = self.platform.settings.max_redeliveries
        # tasks work FIFO, so only the oldest unacked message can have been
        # in flight; the rest are requeued without being charged
        for i, seq in enumerate(sorted(pend)):
            msg = pend[seq]
            if i == 0:
                n = self.redeliveries.get(msg.msg_id, 0) + 1
                self.redeliveries[msg.msg_id] = n
                if n > limit:
                    self.poisoned.append(msg.msg_id)
                    self.rt.log("poison_dropped", job=self.spec.job_id, msg=msg.msg_id)
                    continue
            self.backlog.append(msg)
        pend.clear()
        self.rt.log("redispatch", job=self.spec.job_id, task=name, count=len(self.backlog))
        self._flush_backlog()

    def depth(self) -> int:
        mail = self.rt.mail
        d = len(self.backlog)
        for t in self.tasks.values():
            if t.alive:
                d += mail.queue_depth(t.address, workload_only=True)
        return d

    def _evaluate(self) -> None:
        self.on_mail()
        decision = self.scaler.evaluate(self.depth(), self.task_count(), self.rt.now)
        if decision.action == "up":
            for _ in range(decision.k):
                if not self._spawn():
                    break
            self.rt.log("scale", pool=self.spec.job_id, action="up", k=decision.k,
                        size=self.task_count())
        elif decision.action == "down":
            newest = [n for n in reversed(list(self.tasks)) if n not in self.retiring]
            for name in newest[:decision.k]:
                self.retiring.add(name)
                self._maybe_retire(name)
            self.rt.log("scale", pool=self.spec.job_id, action="down", k=decision.k,
                        size=self.task_count())
        self.after(self.config.evaluation_period, self._evaluate)

    def _maybe_retire(self, name: str) -> None:
        task = self.tasks.get(name)
        if task is None:
            return
        if task.alive and (task.busy or self.rt.mail.queue_depth(task.address, True) > 0):
            return
        if task.alive:
            task.flush_state()
        self.platform.supervisor.unsupervise(name)
        task.stop()
        pend = self.outstanding.pop(name, {})
        for seq in sorted(pend):
            self.backlog.append(pend[seq])
        self.retiring.discard(name)
        self.suspect.discard(name)
        del self.tasks[name]

    def is_quiescent(self) -> bool:
        if self.backlog or any(self.outstanding.values()):
            return False
        sub = self.subscription
        return sub is None or sub.lag() == 0


class LiquidJob(Job):
    """Fixed task set in a broker consumer group; node-bound recovery only."""

    def __init__(self, platform: Platform, spec: JobSpec) -> None:
        super().__init__(platform, spec)
        if not isinstance(spec.mode, LiquidMode):
            raise JobError("LiquidJob requires LiquidMode")
        self.group = f"liquid/{spec.job_id}"
        workers = self.rt.worker_nodes()
        if not workers:
            raise JobError("no worker nodes")
        self.tasks: list[LiquidTask] = []
        for i in range(spec.mode.tasks):
            home = workers[i % len(workers)]
            t = LiquidTask(self, f"{spec.job_id}-t{i:03d}", home)
            t.manager = self
            self.tasks.append(t)
        self.rt.on_node_change(self._node_changed)

    def on_start(self) -> None:
        for t in self.tasks:
            if t.home.up:
                t.launch(t.home)

    def _node_changed(self, node_id: str, up: bool) -> None:
        if up:
            for t in self.tasks:
                if t.home.node_id == node_id and not t.alive:
                    t.launch(t.home)
        else:
            self.after(self.platform.settings.session_timeout, self._expire_sessions, node_id)

    def _expire_sessions(self, node_id: str) -> None:
        node = self.rt.nodes[node_id]
        for t in self.tasks:
            if t.home.node_id == node_id and not t.alive and not node.up:
                self.rt.broker.leave_group(self.group, self.spec.input, t.name)
                self.rt.log("session_expired", component=t.name)

    def emit(self, task: _TaskBase, outputs: list[Output]) -> None:
        broker = self.rt.broker
        for out in outputs:
            broker.publish(out.topic, out.key, out.payload, task.name)

    def on_mail(self) -> None:
        mail = self.rt.mail
        while True:
            env = mail.receive(self.address)
            if env is None:
                return
            if env.kind is Kind.CONTROL:
                self.handle_control(env.body)

    def task_count(self) -> int:
        return len(self.tasks)

    def active_tasks(self) -> int:
        a = self.rt.broker.assignment(self.group, self.spec.input)
        alive = {t.name for t in self.tasks if t.alive}
        return len(a.active_consumers() & alive)

    def all_tasks(self) -> list[_TaskBase]:
        return list(self.tasks)

    def is_quiescent(self) -> bool:
        if any(t.busy for t in self.tasks if t.alive):
            return False
        return self.rt.broker.lag(self.group, self.spec.input) == 0


def start_job(platform: Platform, spec: JobSpec) -> Job:
    """Validate ``spec`` and bring the job up on the platform."""
    broker: Broker = platform.rt.broker
    broker.topic(spec.input)
    if spec.output is not None:
        broker.topic(spec.output)
    if spec.job_id in platform.jobs:
        raise JobError(f"duplicate job id {spec.job_id!r}")
    if isinstance(spec.mode, LiquidMode):
        job: Job = LiquidJob(platform, spec)
        job.launch(platform.rt.control)
    else:
        if platform.supervisor is None or platform.vml is None:
            raise JobError("reactive jobs need a supervisor and a virtual messaging layer")
        pool = TaskPool(platform, spec)
        pool.launch(platform.rt.control)
        parts = broker.topic(spec.input).partition_count
        consumers = spec.mode.consumers or parts
        retry = platform.settings.retry_delay or spec.mode.pool.evaluation_period
        pool.subscription = subscribe_job(platform.vml.vtopic(spec.input), spec.job_id,
                                          spec.batch_n, consumers, pool, retry, manager=pool)
        job = pool
    platform.jobs[spec.job_id] = job
    return job
