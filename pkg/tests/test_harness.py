import csv
import json
import math
import os

import pytest

from reactive_liquid.harness import (
    ComparisonError,
    ConfigError,
    ExperimentConfig,
    FailureEvent,
    FailurePlan,
    ModelDomainError,
    RunMetrics,
    build_metrics,
    compare_runs,
    emit_comparison,
    emit_reports,
    failure_ticker,
    model_completion_liquid,
    model_completion_reactive,
    parse_input,
    read_cumulative,
    run_experiment,
)
from reactive_liquid.harness.cli import main
from reactive_liquid.harness.config import SynthSource, TDriveSource
from reactive_liquid.ingest import synth_trajectories
from reactive_liquid.messages import CompletionRecord
from reactive_liquid.sim import SECOND

NODES = ["n0", "n1", "n2"]


@pytest.fixture(scope="module")
def points():
    return synth_trajectories(0, 50, 1000, 10)


# failure schedules

def test_ticker_zero_probability_is_empty():
    assert failure_ticker(FailurePlan(0.0, seed=3), NODES, 10**12) == []


def test_ticker_certain_failure_kills_all_and_restores():
    plan = FailurePlan(1.0, window=600, downtime=300, scale=1 / 20)
    sched = failure_ticker(plan, NODES, plan.window_us + 1)
    kills = [e for e in sched if e.action == "kill"]
    restores = [e for e in sched if e.action == "restore"]
    assert [(e.t, e.node) for e in kills] == [(30 * SECOND, n) for n in NODES]
    assert [(e.t, e.node) for e in restores] == [(45 * SECOND, n) for n in NODES]


def test_ticker_reproducible_and_skips_down_nodes():
    plan = FailurePlan(0.3, window=600, downtime=900, seed=42)
    a = failure_ticker(plan, NODES, 3600 * SECOND)
    assert a == failure_ticker(plan, reversed(NODES), 3600 * SECOND)
    assert a
    down = {}
    for e in a:
        if e.action == "kill":
            assert down.get(e.node, -1) <= e.t
            down[e.node] = e.t + plan.downtime_us


def test_ticker_rejects_bad_plans():
    with pytest.raises(ValueError):
        FailurePlan(1.5)
    with pytest.raises(ValueError):
        FailurePlan(0.5, window=0)


# analytic models

def test_liquid_model_examples():
    assert model_completion_liquid(10, 2, 8, 5) == 60
    assert model_completion_liquid(1, 0, 7, 1) == 7
    for bad in ((10, 2, 8, 0), (10, 2, 8, 11), (0, 1, 1, 1), (3, -1, 1, 1)):
        with pytest.raises(ModelDomainError):
            model_completion_liquid(*bad)


def test_reactive_model_examples():
    assert model_completion_reactive(10, 2, 30, 8) == 58
    assert model_completion_reactive(10, 2, 0, 8) == 28
    with pytest.raises(ModelDomainError):
        model_completion_reactive(10, 2, -1, 8)


# comparisons

def series(values):
    return RunMetrics(t=list(range(1, len(values) + 1)), cumulative=list(values))


def test_identical_runs_fit_exactly():
    a = series([3, 10, 12, 30, 31])
    rep = compare_runs(a, a)
    assert (rep.slope, rep.intercept, rep.r_squared) == (1.0, 0.0, 1.0)
    assert rep.verdict == "on y=x"


def test_doubled_run_has_slope_two():
    a = series([1, 4, 9, 16])
    rep = compare_runs(a, series([2 * v for v in a.cumulative]))
    assert rep.slope == pytest.approx(2.0)
    assert rep.r_squared == pytest.approx(1.0)
    assert rep.verdict == "b above y=x"


def test_r_squared_against_numpy():
    np = pytest.importorskip("numpy")
    a = series([0, 5, 7, 20, 21, 40])
    b = series([1, 3, 15, 18, 50, 52])
    rep = compare_runs(a, b)
    slope, intercept = np.polyfit(a.cumulative, b.cumulative, 1)
    pred = slope * np.array(a.cumulative) + intercept
    y = np.array(b.cumulative)
    r2 = 1 - ((y - pred) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    assert rep.slope == pytest.approx(slope)
    assert rep.intercept == pytest.approx(intercept)
    assert rep.r_squared == pytest.approx(r2)


def test_compare_errors():
    with pytest.raises(ComparisonError):
        compare_runs(series([1, 2]), series([1, 2]))
    with pytest.raises(ComparisonError):
        compare_runs(series([1, 2, 3]), series([1, 2, 3, 4]))
    with pytest.raises(ComparisonError):
        compare_runs(series([5, 5, 5]), series([1, 2, 3]))


# metrics and reports

def rec(msg_id, complete, task="t0"):
    return CompletionRecord(msg_id, "j", task, 0, complete, 0, 1, 1, 1)


def test_build_metrics_bins_first_completions_and_flags_duplicates():
    recs = [rec("a", 1), rec("b", SECOND), rec("c", SECOND + 1), rec("a", 2 * SECOND, "t1"),
            rec("d", 5 * SECOND)]
    m = build_metrics(recs, 3)
    assert m.t == [1, 2, 3]
    assert m.throughput == [2, 1, 0]
    assert m.cumulative == [2, 3, 3]
    assert m.duplicates == 1
    assert [dup for _, dup in m.completions] == [False, False, False, True, False]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_empty_run_writes_header_only_csvs(tmp_path):
    emit_reports(RunMetrics(), str(tmp_path))
    for name, header in (("throughput.csv", ["t_sec", "count"]),
                         ("cumulative.csv", ["t_sec", "total"])):
        assert read_csv(tmp_path / name) == [header]
    assert read_csv(tmp_path / "completion.csv")[0][:3] == ["msg_id", "consume_us", "complete_us"]
    assert len(read_csv(tmp_path / "completion.csv")) == 1
    assert json.loads((tmp_path / "summary.json").read_text())["total"] == 0


def test_reports_roundtrip_and_comparison_outputs(tmp_path):
    recs = [rec(f"m{i}", (i + 1) * SECOND // 3) for i in range(12)] + [rec("m0", 3 * SECOND)]
    m = build_metrics(recs, 4)
    emit_reports(m, str(tmp_path))
    rows = read_csv(tmp_path / "completion.csv")
    assert len(rows) - 1 == len(recs)
    assert sum(int(r[-1]) for r in rows[1:]) == 1
    back = read_cumulative(str(tmp_path))
    assert back.cumulative == m.cumulative and back.throughput == m.throughput
    rep = compare_runs(m, m)
    emit_comparison(rep, str(tmp_path / "cmp"))
    assert read_csv(tmp_path / "cmp" / "comparison.csv")[0] == ["t_sec", "a_total", "b_total"]
    text = (tmp_path / "cmp" / "comparison_summary.txt").read_text()
    assert "slope: 1.000000" in text and "r_squared: 1.000000" in text


# configuration

def test_parse_input():
    assert parse_input("synth:taxis=5,points=10,hotspots=2") == SynthSource(5, 10, 2)
    assert parse_input("tdrive:/data/x") == TDriveSource("/data/x")
    for bad in ("synth:taxis=x", "synth:foo=1", "tdrive:", "kafka:x", "synth:points=0"):
        with pytest.raises(ConfigError):
            parse_input(bad)


@pytest.mark.parametrize("field,value", [
    ("mode", "batch"), ("tasks", 0), ("pool_min", 13), ("failure_prob", 1.1),
    ("duration", 0), ("cores_per_node", 0), ("low_watermark", 60.0), ("batch_n", 4096),
])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        ExperimentConfig(**{field: value}).validate()


# end-to-end properties

def test_run_outputs_are_consistent(tmp_path, points):
    cfg = ExperimentConfig(mode="reactive", duration=15, seed=1)
    res = run_experiment(cfg, out_dir=str(tmp_path), points=points)
    m = res.metrics
    assert m.total > 0 and m.duplicates == 0
    cum = [int(r[1]) for r in read_csv(tmp_path / "cumulative.csv")[1:]]
    assert cum == sorted(cum) and cum[-1] == m.total
    rows = read_csv(tmp_path / "completion.csv")[1:]
    assert len(rows) == len(m.completions)
    assert len({r[0] for r in rows}) >= m.total
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 1
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["preloaded"] == len(points)


def test_liquid_degrades_under_heavy_failure(points):
    base = run_experiment(ExperimentConfig(mode="liquid", duration=60, time_scale=1 / 40),
                          points=points)
    hit = run_experiment(ExperimentConfig(mode="liquid", duration=60, time_scale=1 / 40,
                                          failure_prob=0.9), points=points)
    assert hit.metrics.summary["node_kills"] > 0
    assert hit.metrics.total < base.metrics.total


def test_reactive_throughput_recovers_after_failure():
    pts = synth_trajectories(0, 200, 1000, 20)
    kill, back = 40 * SECOND, 50 * SECOND
    schedule = [FailureEvent(kill, "kill", "n1"), FailureEvent(back, "restore", "n1")]
    cfg = ExperimentConfig(mode="reactive", duration=60)
    res = run_experiment(cfg, points=pts, schedule=schedule)
    thr = res.metrics.throughput
    k = kill // SECOND
    baseline = sum(thr[k - 30:k]) / 30
    limit = 5 * res.supervisor.heartbeat_timeout
    events = [e.t for e in res.rt.events if e.kind == "restarted"] + [back]
    assert len(events) > 1
    for t in events:
        sec = math.ceil((t + limit) / SECOND)
        assert max(thr[t // SECOND:sec]) >= 0.8 * baseline, (t, thr[t // SECOND:sec], baseline)


# command line

def test_cli_run_and_compare(tmp_path, capsys):
    common = ["--duration", "5", "--input", "synth:taxis=20,points=500,hotspots=5",
              "--deterministic"]
    a, b, out = (str(tmp_path / n) for n in ("a", "b", "cmp"))
    assert main(["run", "--mode", "liquid", "--tasks", "3", "--out", a] + common) == 0
    assert main(["run", "--mode", "reactive", "--pool-max", "6", "--out", b] + common) == 0
    assert os.path.exists(os.path.join(a, "throughput.png"))
    assert main(["compare", a, b, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "comparison.png"))
    assert "slope" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    out = str(tmp_path / "x")
    assert main(["run", "--mode", "reactive", "--tasks", "3", "--out", out]) == 2
    assert main(["run", "--mode", "liquid", "--failure-prob", "2", "--out", out]) == 2
    assert main(["run", "--mode", "liquid", "--duration", "1", "--input",
                 f"tdrive:{tmp_path / 'missing'}", "--out", out]) == 3
    assert main(["compare", str(tmp_path / "nope"), str(tmp_path / "nope"), "--out", out]) == 3
    with pytest.raises(SystemExit):
        main(["run", "--mode", "liquid", "--tasks", "3", "--pool-min", "2", "--out", out])
