import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reactive_liquid.mailbox import Address, Envelope, Kind, MailboxClosed, MailSystem, SendResult


def env(body, sender=None, kind=Kind.DATA):
    return Envelope(kind, body, sender=sender)


def test_incarnations():
    ms = MailSystem()
    a0 = ms.open_mailbox("n0", "x")
    assert a0.incarnation == 0
    ms.close_mailbox(a0)
    a1 = ms.open_mailbox("n1", "x")
    assert a1.incarnation == 1
    assert a0 != a1
    with pytest.raises(ValueError):
        ms.open_mailbox("n0", "y", capacity=0)


def test_send_outcomes():
    ms = MailSystem()
    a = ms.open_mailbox("n0", "x", capacity=2)
    assert ms.send(a, env(1)) is SendResult.ENQUEUED
    assert ms.send(a, env(2)) is SendResult.ENQUEUED
    assert ms.send(a, env(3)) is SendResult.MAILBOX_FULL
    ms.close_mailbox(a)
    ms.open_mailbox("n0", "x")
    assert ms.send(a, env(4)) is SendResult.DEAD_LETTER
    assert ms.dead_letters == 1


def test_receive_and_depth():
    ms = MailSystem()
    a = ms.open_mailbox("n0", "x")
    assert ms.receive(a) is None
    for i in range(3):
        ms.send(a, env(i))
    assert ms.receive(a).body == 0
    assert ms.queue_depth(a) == 2
    ms.close_mailbox(a)
    with pytest.raises(MailboxClosed):
        ms.receive(a)


def test_heartbeats_not_workload():
    ms = MailSystem()
    a = ms.open_mailbox("n0", "x")
    ms.send(a, env(None, kind=Kind.HEARTBEAT))
    ms.send(a, env(1))
    assert ms.queue_depth(a) == 2
    assert ms.queue_depth(a, workload_only=True) == 1
    ms.receive(a)
    assert ms.queue_depth(a, workload_only=True) == 1


def test_close_returns_undelivered():
    ms = MailSystem()
    a = ms.open_mailbox("n0", "x")
    ms.send(a, env("a"))
    assert [e.body for e in ms.close_mailbox(a)] == ["a"]


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1)), max_size=200),
       st.integers(1, 20))
def test_fifo_per_sender_and_at_most_once(ops, capacity):
    ms = MailSystem(track_delivery=True)
    box = ms.open_mailbox("n0", "rx", capacity=capacity)
    senders = [Address("n1", f"s{i}", 0) for i in range(4)]
    sent: dict[int, list[int]] = {i: [] for i in range(4)}
    got: dict[int, list[int]] = {i: [] for i in range(4)}
    seq = 0
    for who, action in ops:
        if action == 0:
            res = ms.send(box, env((who, seq), sender=senders[who]))
            assert ms.queue_depth(box) <= capacity
            if res is SendResult.ENQUEUED:
                sent[who].append(seq)
            seq += 1
        else:
            e = ms.receive(box)
            if e is not None:
                got[e.body[0]].append(e.body[1])
    while (e := ms.receive(box)) is not None:
        got[e.body[0]].append(e.body[1])
    assert got == sent


def test_double_delivery_detected():
    ms = MailSystem(track_delivery=True)
    a = ms.open_mailbox("n0", "x")
    e = env(1)
    ms.send(a, e)
    ms.receive(a)
    ms.send(a, e)
    with pytest.raises(AssertionError):
        ms.receive(a)


def test_deterministic_interleaving():
    from reactive_liquid.runtime import Component, Runtime
    from reactive_liquid.sim import Scheduler

    def trace(seed):
        rt = Runtime(Scheduler(seed=seed), n_nodes=1)
        seen = []

        class Sink(Component):
            def on_mail(self):
                while (e := rt.mail.receive(self.address)) is not None:
                    seen.append(e.body)

        sink = Sink(rt, "sink")
        sink.launch(rt.nodes["n0"])
        senders = []
        for i in range(5):
            c = Component(rt, f"s{i}")
            c.launch(rt.nodes["n0"])
            senders.append(c)
        rng = random.Random(0)
        for k in range(100):
            s = senders[rng.randrange(5)]
            rt.sched.call_at(rng.randrange(10), s.send, sink.address, Kind.DATA, (s.name, k))
        rt.sched.run()
        return seen

    assert trace(3) == trace(3)
