"""Virtual messaging layer between the broker and the processing layer.

A virtual topic mirrors one broker topic. Each subscribing job gets a virtual
consumer group (never more consumers than partitions) whose consumers drain
partitions in batches and hand every message to the job's task pool; offsets
are committed only for messages the pool accepted. Tasks publish through the
topic's elastic virtual producer group.
"""

from __future__ import annotations

from collections import deque
from typing import Any, Optional, Protocol

from .broker import Broker
from .mailbox import Envelope, Kind, SendResult
from .messages import Output, StreamMessage, message_id
from .reactive.scaling import ElasticPoolConfig, ElasticScaler
from .runtime import Component, Runtime


class SubscriptionError(Exception):
    pass


class Dispatcher(Protocol):
    def dispatch(self, msg: StreamMessage) -> SendResult | str: ...


NO_WORKERS = "no_workers"


class VirtualConsumer(Component):
    """Stateful consumer: its only state is the committed offsets in the broker."""

    def __init__(self, rt: Runtime, group: "VirtualConsumerGroup", name: str) -> None:
        super().__init__(rt, name)
        self.group = group
        self.generation = -1
        self.partitions: list[int] = []
        self.positions: dict[int, int] = {}
        self._rr = 0
        self.dispatched = 0
        self.manager = group.manager

    def on_start(self) -> None:
        self.generation = -1
        self.positions = {}
        self._poll()

    def _refresh_assignment(self) -> None:
        g = self.group
        a = g.broker.assignment(g.broker_group, g.topic)
        if a.generation != self.generation:
            self.generation = a.generation
            self.partitions = a.partitions_of(self.name)
            self.positions = {p: g.broker.fetch_committed(g.broker_group, g.topic, p)
                              for p in self.partitions}

    def fetch_batch(self) -> list:
        """Up to ``batch_n`` messages, taken round-robin across partitions."""
        g = self.group
        n = g.batch_n
        parts = self.partitions
        if not parts:
            return []
        k = len(parts)
        start = self._rr % k
        self._rr += 1
        order = parts[start:] + parts[:start]
        chunks = [g.broker.fetch(g.topic, p, self.positions[p], n) for p in order]
        batch = []
        i = 0
        while len(batch) < n and any(chunks):
            for chunk in chunks:
                if i < len(chunk) and len(batch) < n:
                    batch.append(chunk[i])
            i += 1
            if all(i >= len(c) for c in chunks):
                break
        for m in batch:
            self.positions[m.partition] = m.offset + 1
        return batch

    def _poll(self) -> None:
        self._refresh_assignment()
        batch = self.fetch_batch()
        if not batch:
            self.after(self.group.poll_interval, self._poll)
            return
        start = self.rt.now
        cost = len(batch) * self.rt.costs.consume_us
        self.after(cost, self._dispatch, batch, start, 0, {})

    def _dispatch(self, batch: list, start: int, i: int, acked: dict[int, int]) -> None:
        g = self.group
        n = len(batch)
        consumed_at = start + n * self.rt.costs.consume_us
        for j in range(i, n):
            m = batch[j]
            msg = StreamMessage(message_id(g.topic, m.partition, m.offset), m.key, m.payload,
                                m.partition, m.offset, start, n, consumed_at, j + 1)
            res = g.dispatcher.dispatch(msg)
            if not self.alive:
                return
            if res is SendResult.ENQUEUED:
                acked[m.partition] = m.offset + 1
                self.dispatched += 1
                continue
            self._commit(acked)
            if res == NO_WORKERS and g.notify is not None:
                self.send(g.notify.address, Kind.FAILURE_NOTICE, ("no_workers", g.job_id))
            self.after(g.retry_delay, self._dispatch, batch, start, j, acked)
            return
        self._commit(acked)
        self._poll()

    def _commit(self, acked: dict[int, int]) -> None:
        g = self.group
        for p, off in acked.items():
            g.broker.commit_offset(g.broker_group, g.topic, p, off)


class VirtualConsumerGroup:
    def __init__(self, rt: Runtime, vtopic: "VirtualTopic", job_id: str, batch_n: int,
                 dispatcher: Dispatcher, poll_interval: int, retry_delay: int,
                 supervisor: Any, manager: Optional[Component] = None) -> None:
        self.rt = rt
        self.broker: Broker = rt.broker
        self.topic = vtopic.backing_topic
        self.job_id = job_id
        self.broker_group = f"{vtopic.backing_topic}/{job_id}"
        self.batch_n = batch_n
        self.dispatcher = dispatcher
        self.poll_interval = poll_interval
        self.retry_delay = retry_delay
        self.notify = supervisor
        self.manager = manager
        self.consumers: list[VirtualConsumer] = []

    def committed(self) -> dict[int, int]:
        parts = self.broker.topic(self.topic).partition_count
        return {p: self.broker.fetch_committed(self.broker_group, self.topic, p)
                for p in range(parts)}

    def lag(self) -> int:
        return self.broker.lag(self.broker_group, self.topic)


class VirtualProducer(Component):
    """Publishes batches handed over by its group; acks each publish back."""

    def __init__(self, rt: Runtime, group: "VirtualProducerGroup", name: str) -> None:
        super().__init__(rt, name)
        self.group = group
        self.manager = group
        self.busy = False
        self.published = 0

    def on_start(self) -> None:
        self.busy = False
        self.on_mail()

    def on_mail(self) -> None:
        if self.busy:
            return
        batch = []
        limit = self.group.batch_size
        while len(batch) < limit:
            env = self.rt.mail.receive(self.address)
            if env is None:
                break
            batch.append(env.body)
        if not batch:
            return
        self.busy = True
        self.after(len(batch) * self.rt.costs.publish_us, self._flush, batch)

    def _flush(self, batch: list[tuple[int, Output]]) -> None:
        broker = self.rt.broker
        for seq, out in batch:
            broker.publish(out.topic, out.key, out.payload, self.name)
            self.published += 1
        self.send(self.group.address, Kind.CONTROL, ("published", self.name, [s for s, _ in batch]))
        self.busy = False
        self.on_mail()


class VirtualProducerGroup(Component):
    """Elastic pool of producers fed round-robin from a group queue.

    Messages stay pending against a producer until it acknowledges the
    publish; a failed producer's pending messages go back to the queue head.
    """

    capacity = 1 << 22
    mail_delay = 1_000

    def __init__(self, rt: Runtime, vtopic: "VirtualTopic", config: ElasticPoolConfig,
                 supervisor: Any, producer_capacity: int = 1024, batch_size: int = 64) -> None:
        super().__init__(rt, f"vprod:{vtopic.backing_topic}")
        self.vtopic = vtopic
        self.config = config
        self.scaler = ElasticScaler(config)
        self.supervisor = None
        self._sup = supervisor
        self.producer_capacity = producer_capacity
        self.batch_size = batch_size
        self.producers: dict[str, VirtualProducer] = {}
        self.queue: deque[tuple[int, Output]] = deque()
        self.pending: dict[str, dict[int, Output]] = {}
        self.suspect: set[str] = set()
        self._seq = 0
        self._next_id = 0
        self._rr = 0
        self.retiring: set[str] = set()
        self.spawn_failures = 0

    def on_start(self) -> None:
        for _ in range(self.config.min_workers):
            self._spawn()
        self.after(self.config.evaluation_period, self._evaluate)

    def _spawn(self) -> bool:
        node = self.rt.least_loaded()
        if node is None:
            self.spawn_failures += 1
            self.send(self._sup.address, Kind.FAILURE_NOTICE, ("spawn_failed", self.name))
            return False
        name = f"{self.vtopic.backing_topic}-p{self._next_id:03d}"
        self._next_id += 1
        prod = VirtualProducer(self.rt, self, name)
        prod.capacity = self.producer_capacity
        self.producers[name] = prod
        self.pending[name] = {}
        self._sup.spawn(prod, node)
        return True

    def vproduce(self, outputs: list[Output]) -> int:
        """Queue outputs for publishing; returns how many were accepted."""
        for out in outputs:
            self.queue.append((self._seq, out))
            self._seq += 1
        self.pump()
        return len(outputs)

    def _routable(self) -> list[VirtualProducer]:
        return [p for name, p in self.producers.items()
                if p.alive and name not in self.suspect and name not in self.retiring]

    def pump(self) -> None:
        live = self._routable()
        if not live:
            return
        mail = self.rt.mail
        k = len(live)
        blocked = 0
        while self.queue and blocked < k:
            prod = live[self._rr % k]
            self._rr += 1
            seq, out = self.queue[0]
            res = mail.send(prod.address, _env(seq, out, self.address))
            if res is SendResult.ENQUEUED:
                self.queue.popleft()
                self.pending[prod.name][seq] = out
                blocked = 0
            else:
                if res is SendResult.DEAD_LETTER:
                    self.suspect.add(prod.name)
                blocked += 1

    def on_mail(self) -> None:
        mail = self.rt.mail
        while True:
            env = mail.receive(self.address)
            if env is None:
                break
            body = env.body
            if env.kind is Kind.DATA:
                self.vproduce(body)
            elif env.kind is Kind.FAILURE_NOTICE:
                self._requeue(body)
            elif body[0] == "published":
                pend = self.pending.get(body[1])
                if pend is not None:
                    for s in body[2]:
                        pend.pop(s, None)
                self._maybe_retire(body[1])
            elif body[0] == "restarted":
                self.suspect.discard(body[1])
        self.pump()

    def _requeue(self, name: str) -> None:
        self.suspect.add(name)
        pend = self.pending.get(name, {})
        self.queue.extendleft(reversed(sorted(pend.items())))
        pend.clear()

    def depth(self) -> int:
        mail = self.rt.mail
        d = len(self.queue)
        for p in self.producers.values():
            if p.alive:
                d += mail.queue_depth(p.address, workload_only=True)
        return d

    def members(self) -> int:
        return len(self.producers) - len(self.retiring)

    def _evaluate(self) -> None:
        decision = self.scaler.evaluate(self.depth(), self.members(), self.rt.now)
        if decision.action == "up":
            for _ in range(decision.k):
                if not self._spawn():
                    break
            self.rt.log("scale", pool=self.name, action="up", k=decision.k, size=self.members())
        elif decision.action == "down":
            newest = [n for n in reversed(list(self.producers)) if n not in self.retiring]
            for name in newest[:decision.k]:
                self.retiring.add(name)
                self._maybe_retire(name)
            self.rt.log("scale", pool=self.name, action="down", k=decision.k, size=self.members())
        self.pump()
        self.after(self.config.evaluation_period, self._evaluate)

    def _maybe_retire(self, name: str) -> None:
        if name not in self.retiring:
            return
        prod = self.producers[name]
        if prod.alive and (self.pending[name] or prod.busy):
            return
        self._sup.unsupervise(name)
        prod.stop()
        self._requeue(name)
        self.retiring.discard(name)
        self.suspect.discard(name)
        del self.producers[name]
        del self.pending[name]


def _env(seq: int, out: Output, sender) -> Envelope:
    return Envelope(Kind.DATA, (seq, out), sender=sender)


class VirtualTopic:
    def __init__(self, layer: "VirtualMessagingLayer", backing_topic: str) -> None:
        self.layer = layer
        self.backing_topic = backing_topic
        self.consumer_groups: dict[str, VirtualConsumerGroup] = {}
        self._producer_group: Optional[VirtualProducerGroup] = None

    @property
    def producer_group(self) -> VirtualProducerGroup:
        if self._producer_group is None:
            lay = self.layer
            pg = VirtualProducerGroup(lay.rt, self, lay.producer_config, lay.supervisor,
                                      lay.producer_capacity, lay.producer_batch)
            pg.launch(lay.rt.control)
            self._producer_group = pg
        return self._producer_group


class VirtualMessagingLayer:
    def __init__(self, rt: Runtime, supervisor: Any,
                 producer_config: Optional[ElasticPoolConfig] = None,
                 poll_interval: int = 50_000, producer_capacity: int = 1024,
                 producer_batch: int = 64) -> None:
        self.rt = rt
        self.supervisor = supervisor
        self.producer_config = producer_config or ElasticPoolConfig(1, 3, 200.0, 10.0)
        self.poll_interval = poll_interval
        self.producer_capacity = producer_capacity
        self.producer_batch = producer_batch
        self.topics: dict[str, VirtualTopic] = {}

    def vtopic(self, name: str) -> VirtualTopic:
        vt = self.topics.get(name)
        if vt is None:
            self.rt.broker.topic(name)
            vt = VirtualTopic(self, name)
            self.topics[name] = vt
        return vt


def subscribe_job(vtopic: VirtualTopic, job_id: str, batch_n: int, consumer_count: int,
                  dispatcher: Dispatcher, retry_delay: int,
                  manager: Optional[Component] = None) -> VirtualConsumerGroup:
    """Spawn ``consumer_count`` supervised consumers for ``job_id``."""
    layer = vtopic.layer
    rt = layer.rt
    parts = rt.broker.topic(vtopic.backing_topic).partition_count
    if consumer_count < 1:
        raise SubscriptionError("a subscription needs at least one consumer")
    if consumer_count > parts:
        raise SubscriptionError(
            f"{consumer_count} consumers exceed the {parts} partitions of {vtopic.backing_topic}")
    if job_id in vtopic.consumer_groups:
        raise SubscriptionError(f"job {job_id!r} already subscribed to {vtopic.backing_topic}")
    if batch_n < 1:
        raise SubscriptionError("batch size must be positive")
    group = VirtualConsumerGroup(rt, vtopic, job_id, batch_n, dispatcher, layer.poll_interval,
                                 retry_delay, layer.supervisor, manager)
    vtopic.consumer_groups[job_id] = group
    names = [f"{vtopic.backing_topic}/{job_id}-c{i}" for i in range(consumer_count)]
    for name in names:
        rt.broker.join_group(group.broker_group, vtopic.backing_topic, name)
    for name in names:
        vc = VirtualConsumer(rt, group, name)
        group.consumers.append(vc)
        node = rt.least_loaded()
        if node is None:
            raise SubscriptionError("no healthy node to place a virtual consumer")
        layer.supervisor.spawn(vc, node)
    return group


def vproduce(vtopic: VirtualTopic, outputs: list[Output]) -> int:
    return vtopic.producer_group.vproduce(outputs)
