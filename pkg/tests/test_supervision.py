from reactive_liquid.mailbox import Address
from reactive_liquid.reactive import SupervisionRecord, detect_failures, record_heartbeat, restart_backoff

A = Address("n0", "x", 0)


def rec(last=0):
    return SupervisionRecord(A, last, heartbeat_interval=100_000, miss_threshold=3)


def test_threshold():
    r = rec()
    assert detect_failures([r], 250_000) == []
    assert detect_failures([r], 300_000) == []
    assert detect_failures([r], 350_000) == [A]


def test_detection_idempotent():
    r = rec()
    assert detect_failures([r], 400_000) == [A]
    assert detect_failures([r], 500_000) == []


def test_heartbeats_from_stale_incarnation_ignored():
    r = rec()
    assert not record_heartbeat(r, Address("n0", "x", 7), 200_000)
    assert r.last_heartbeat == 0
    assert record_heartbeat(r, A, 200_000)
    assert r.last_heartbeat == 200_000
    record_heartbeat(r, A, 100_000)
    assert r.last_heartbeat == 200_000


def test_backoff_sequence():
    assert [restart_backoff(k) for k in (1, 2, 3)] == [100_000, 200_000, 400_000]
    assert restart_backoff(20) == 5_000_000
    assert restart_backoff(0) == 0
