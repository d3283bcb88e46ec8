import pytest

from reactive_liquid.runtime import CostModel, Runtime
from reactive_liquid.sim import Scheduler


@pytest.fixture
def rt():
    return Runtime(Scheduler(seed=1), n_nodes=3, cores_per_node=None, costs=CostModel(),
                   track_delivery=True)


def make_platform(n_nodes=3, seed=0, cores=None, partitions=3, costs=None, reactive=True,
                  settings=None):
    from reactive_liquid.harness.metrics import MetricsCollector
    from reactive_liquid.processing import Platform
    from reactive_liquid.reactive.supervisor import Supervisor
    from reactive_liquid.virtual_messaging import VirtualMessagingLayer

    rt = Runtime(Scheduler(seed=seed), n_nodes=n_nodes, cores_per_node=cores,
                 costs=costs or CostModel(), track_delivery=True)
    rt.broker.create_topic("in", partitions)
    rt.broker.create_topic("out", partitions)
    sup = Supervisor(rt)
    sup.launch(rt.control)
    metrics = MetricsCollector(rt)
    metrics.launch(rt.control)
    vml = VirtualMessagingLayer(rt, sup) if reactive else None
    return Platform(rt, sup, vml=vml, metrics=metrics, settings=settings)


def fill(broker, topic, n, keyed=False):
    for i in range(n):
        broker.publish(topic, str(i).encode() if keyed else None, f"m{i}".encode(), "test")


def completion_ids(platform):
    return [r.msg_id for r in platform.metrics.drain()]


def all_ids(broker, topic):
    parts = broker.topic(topic).partition_count
    return {f"{topic}:{p}:{off}" for p in range(parts) for off in range(broker.end_offset(topic, p))}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
