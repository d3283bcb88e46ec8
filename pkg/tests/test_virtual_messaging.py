import pytest

from conftest import fill
from reactive_liquid.mailbox import SendResult
from reactive_liquid.messages import Output
from reactive_liquid.reactive import ElasticPoolConfig
from reactive_liquid.reactive.supervisor import Supervisor
from reactive_liquid.runtime import Runtime
from reactive_liquid.sim import MS, SECOND, Scheduler
from reactive_liquid.virtual_messaging import (
    SubscriptionError,
    VirtualMessagingLayer,
    subscribe_job,
    vproduce,
)


class Recorder:
    """Accepts everything except the calls listed in ``refuse``."""

    def __init__(self, refuse=()):
        self.seen = []
        self.refuse = set(refuse)
        self.calls = 0

    def dispatch(self, msg):
        self.calls += 1
        if self.calls in self.refuse:
            return SendResult.MAILBOX_FULL
        self.seen.append(msg)
        return SendResult.ENQUEUED


def layer(partitions=3, producers=None, seed=0):
    rt = Runtime(Scheduler(seed=seed), n_nodes=3)
    rt.broker.create_topic("in", partitions)
    rt.broker.create_topic("out", partitions)
    sup = Supervisor(rt)
    sup.launch(rt.control)
    return rt, sup, VirtualMessagingLayer(rt, sup, producers)


def test_consumer_count_bounded_by_partitions():
    rt, sup, vml = layer()
    with pytest.raises(SubscriptionError):
        subscribe_job(vml.vtopic("in"), "j", 10, 4, Recorder(), 10 * MS)
    g = subscribe_job(vml.vtopic("in"), "j", 10, 3, Recorder(), 10 * MS)
    assert len(g.consumers) == 3
    with pytest.raises(SubscriptionError):
        subscribe_job(vml.vtopic("in"), "j", 10, 1, Recorder(), 10 * MS)
    with pytest.raises(SubscriptionError):
        subscribe_job(vml.vtopic("in"), "k", 10, 0, Recorder(), 10 * MS)


def test_whole_batch_accepted_is_committed():
    rt, sup, vml = layer(partitions=1)
    fill(rt.broker, "in", 4)
    rec = Recorder()
    g = subscribe_job(vml.vtopic("in"), "j", 10, 1, rec, 10 * MS)
    rt.sched.run(until=100 * MS)
    assert g.committed() == {0: 4}
    assert [m.batch_index for m in rec.seen] == [1, 2, 3, 4]
    assert {m.batch_n for m in rec.seen} == {4}


def test_refused_message_stops_commit_and_is_retried():
    rt, sup, vml = layer(partitions=1)
    fill(rt.broker, "in", 4)
    rec = Recorder(refuse={3})
    g = subscribe_job(vml.vtopic("in"), "j", 10, 1, rec, 1 * SECOND)
    rt.sched.run(until=500 * MS)
    assert g.committed() == {0: 2}
    rt.sched.run(until=2 * SECOND)
    assert g.committed() == {0: 4}
    assert [m.offset for m in rec.seen] == [0, 1, 2, 3]


def test_consumer_crash_mid_batch_redelivers_uncommitted():
    rt, sup, vml = layer(partitions=1)
    fill(rt.broker, "in", 6)
    rec = Recorder(refuse={4})
    g = subscribe_job(vml.vtopic("in"), "j", 10, 1, rec, 1 * SECOND)
    rt.sched.run(until=500 * MS)
    assert g.committed() == {0: 3}
    g.consumers[0].crash("test")
    rt.sched.run(until=3 * SECOND)
    assert g.committed() == {0: 6}
    assert [m.offset for m in rec.seen] == [0, 1, 2, 3, 4, 5]


def test_batches_interleave_partitions():
    rt, sup, vml = layer(partitions=2)
    for p in (0, 1):
        for i in range(3):
            rt.broker._partition("in", p).append(None, f"{p}{i}".encode(), 0)
    rec = Recorder()
    subscribe_job(vml.vtopic("in"), "j", 6, 1, rec, 10 * MS)
    rt.sched.run(until=100 * MS)
    assert [m.payload for m in rec.seen] == [b"00", b"10", b"01", b"11", b"02", b"12"]


def test_vproduce_publishes_everything_once():
    rt, sup, vml = layer(producers=ElasticPoolConfig(2, 2, 200.0, 10.0))
    outs = [Output("out", None, f"{i}".encode()) for i in range(8)]
    vt = vml.vtopic("out")
    assert vproduce(vt, outs[:4]) == 4
    assert vproduce(vt, outs[4:]) == 4
    rt.sched.run(until=200 * MS)
    got = [m.payload for p in range(3) for m in rt.broker.fetch("out", p, 0, 100)]
    assert sorted(got) == sorted(o.payload for o in outs)
    pg = vt.producer_group
    assert sorted(p.published for p in pg.producers.values()) == [4, 4]


def test_producer_group_scales_up_under_load():
    rt, sup, vml = layer(producers=ElasticPoolConfig(1, 3, 10.0, 2.0, 100 * MS, 0))
    vt = vml.vtopic("out")
    vproduce(vt, [Output("out", None, b"x")] * 20_000)
    rt.sched.run(until=150 * MS)
    assert vt.producer_group.members() == 3
    rt.sched.run(until=2 * SECOND)
    assert sum(rt.broker.end_offset("out", p) for p in range(3)) == 20_000


def test_producer_crash_requeues_pending():
    rt, sup, vml = layer(producers=ElasticPoolConfig(1, 1, 200.0, 10.0))
    vt = vml.vtopic("out")
    vproduce(vt, [Output("out", None, f"{i}".encode()) for i in range(100)])
    rt.sched.run(until=1 * MS)
    pg = vt.producer_group
    next(iter(pg.producers.values())).crash("test")
    rt.sched.run(until=3 * SECOND)
    got = sorted(m.payload for p in range(3) for m in rt.broker.fetch("out", p, 0, 1000))
    assert set(got) == {f"{i}".encode() for i in range(100)}
