import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reactive_liquid.ingest import synth_trajectories
from reactive_liquid.tcmm import (
    RADIUS_EPS,
    Created,
    Merged,
    MicroClusterCF,
    MicroClusterSet,
    TrajectoryPoint,
    cf_add,
    decode_delta,
    encode_delta,
    macro_cluster,
    merged_micro_view,
    micro_update,
    reference_micro_clustering,
    weighted_kmeans,
)


def pt(lon, lat, t=0.0, taxi=1):
    return TrajectoryPoint(taxi, t, lon, lat)


def test_point_validation_and_codec():
    with pytest.raises(ValueError):
        pt(181.0, 0.0)
    with pytest.raises(ValueError):
        pt(0.0, -90.5)
    p = pt(116.5, 39.9, 1201.0, 42)
    assert TrajectoryPoint.decode(p.encode()) == p


def test_cf_add_examples():
    cf = MicroClusterCF.from_point(("o", 0), pt(2, 3))
    assert (cf.n, cf.ls, cf.ss) == (1, (2, 3), 13)
    cf = cf_add(MicroClusterCF.from_point(("o", 0), pt(0, 0, 5.0)), pt(2, 0, 9.0))
    assert (cf.n, cf.ls, cf.ss) == (2, (2, 0), 4)
    assert cf.center == (1, 0)
    assert cf.radius == 1
    assert (cf.t_start, cf.t_end) == (5.0, 9.0)
    late = cf_add(cf, pt(0, 0, 1.0))
    assert late.t_end == 9.0 and late.t_start == 5.0


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=20),
       st.randoms(use_true_random=False))
def test_cf_add_is_order_independent(coords, rnd):
    pts = [pt(x, y) for x, y in coords]

    def build(seq):
        cf = MicroClusterCF.from_point(("o", 0), seq[0])
        for p in seq[1:]:
            cf = cf_add(cf, p)
        return cf

    shuffled = pts[:]
    rnd.shuffle(shuffled)
    a, b = build(pts), build(shuffled)
    assert a.n == b.n == len(pts)
    assert a.ls == pytest.approx(b.ls, abs=1e-9)
    assert a.ss == pytest.approx(b.ss, abs=1e-9)
    assert a.radius_sq >= -RADIUS_EPS


def test_micro_update_examples():
    empty = MicroClusterSet("o")
    s, d = micro_update(empty, pt(0, 0), 2.0)
    assert isinstance(d, Created) and len(empty) == 0 and len(s) == 1
    s, _ = micro_update(s, pt(10, 0), 2.0)
    s2, d = micro_update(s, pt(1, 0), 2.0)
    assert isinstance(d, Merged) and d.id == ("o", 0)
    one = MicroClusterSet("o")
    one, _ = micro_update(one, pt(0, 0), 2.0)
    _, d = micro_update(one, pt(5, 0), 2.0)
    assert isinstance(d, Created) and d.cf.id == ("o", 1)
    with pytest.raises(ValueError):
        micro_update(one, pt(0, 0), 0.0)


def test_tie_goes_to_lower_id():
    s = MicroClusterSet("o")
    for x in (-1.0, 1.0):
        s, _ = micro_update(s, pt(x, 0), 0.5)
    _, d = micro_update(s, pt(0, 0), 1.0)
    assert d.id == ("o", 0)


def run_set(points, d_max):
    s = MicroClusterSet("ref")
    for p in points:
        s.apply(s.plan(p, d_max))
    return s


def test_oracle_equivalence_10k():
    pts = synth_trajectories(5, 40, 250, 12)
    assert len(pts) == 10_000
    d_max = 0.02
    got = run_set(pts, d_max).clusters
    want = reference_micro_clustering(pts, d_max)
    assert got == want
    assert sum(cf.n for cf in got) == len(pts)


def test_limiting_thresholds():
    rng = random.Random(2)
    pts = [pt(rng.uniform(0, 1), rng.uniform(0, 1)) for _ in range(300)]
    pts += pts[:50]
    tiny = run_set(pts, 1e-12)
    assert len(tiny) == len({(p.lon, p.lat) for p in pts})
    huge = run_set(pts, 1e9)
    assert len(huge) == 1 and huge.clusters[0].n == len(pts)


def test_radius_nonnegative_after_every_update():
    s = MicroClusterSet("o")
    for p in synth_trajectories(1, 10, 200, 4):
        s.apply(s.plan(p, 0.05))
        for cf in s.clusters:
            assert cf.radius_sq >= -RADIUS_EPS


def test_replaying_deltas_rebuilds_set():
    pts = synth_trajectories(3, 10, 100, 5)
    s = MicroClusterSet("o")
    log = []
    for p in pts:
        d = s.plan(p, 0.01)
        log.append(encode_delta(d))
        s.apply(d)
    again = MicroClusterSet("o")
    for raw in log:
        again.apply(decode_delta(raw))
    assert again.clusters == s.clusters


def test_delta_codec_layout():
    cf = MicroClusterCF(("t1", 7), 3, (1.5, -2.0), 9.0, 10.0, 20.0)
    raw = encode_delta(Created(cf))
    assert raw[0] == 0
    assert raw[1:5] == (2).to_bytes(4, "little")
    assert raw[5:7] == b"t1"
    assert decode_delta(raw) == Created(cf)
    m = Merged(cf.id, pt(1.0, 2.0, 3.0, 4), cf)
    assert decode_delta(encode_delta(m)) == m
    with pytest.raises(ValueError):
        decode_delta(b"\x07")


def cf_at(i, x, y, n=1):
    return MicroClusterCF(("o", i), n, (x * n, y * n), n * (x * x + y * y), 0.0, 0.0)


def test_macro_examples():
    same = [cf_at(i, 3.0, 4.0) for i in range(5)]
    m = macro_cluster(same, 1)
    assert m.centers == [(3.0, 4.0)]
    two = [cf_at(0, 0, 0), cf_at(1, 10, 10)]
    m = macro_cluster(two, 2, seed=9)
    assert sorted(m.centers) == [(0.0, 0.0), (10.0, 10.0)]
    assert set(m.assignment) == {("o", 0), ("o", 1)}
    assert len(macro_cluster(two, 5).centers) == 2
    with pytest.raises(ValueError):
        macro_cluster([], 2)
    with pytest.raises(ValueError):
        macro_cluster(two, 0)


def test_macro_beats_random_assignment_and_is_deterministic():
    rng = np.random.default_rng(0)
    cfs = [cf_at(i, float(x), float(y), int(n)) for i, (x, y, n) in
           enumerate(zip(rng.normal(0, 5, 50), rng.normal(0, 5, 50), rng.integers(1, 20, 50)))]
    m = macro_cluster(cfs, 3, seed=4)
    assert macro_cluster(cfs, 3, seed=4) == m
    pts = np.array([cf.center for cf in cfs])
    w = np.array([cf.n for cf in cfs], dtype=float)
    for trial in range(20):
        labels = rng.integers(0, 3, len(cfs))
        wcss = 0.0
        for j in range(3):
            mask = labels == j
            if w[mask].sum():
                c = (pts[mask] * w[mask, None]).sum(0) / w[mask].sum()
                wcss += float((w[mask] * ((pts[mask] - c) ** 2).sum(1)).sum())
        assert m.wcss <= wcss
    assert all(b <= a + 1e-9 for a, b in zip(m.wcss_trace, m.wcss_trace[1:]))


def test_every_micro_cluster_assigned():
    cfs = [cf_at(i, float(i % 7), float(i // 7)) for i in range(30)]
    m = macro_cluster(cfs, 4, seed=1)
    assert set(m.assignment) == {cf.id for cf in cfs}
    assert set(m.assignment.values()) <= set(range(4))


def test_weighted_kmeans_respects_weights():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    centers, _, _ = weighted_kmeans(pts, np.array([3.0, 1.0]), 1, 10, 0)
    assert centers[0] == pytest.approx([0.25, 0.0])


def test_merged_view_keeps_largest_summary():
    a = cf_at(0, 1, 1, 2)
    b = cf_at(0, 1, 1, 5)
    view = merged_micro_view([a, b, a])
    assert view[("o", 0)].n == 5
    assert math.isclose(view[("o", 0)].center[0], 1.0)
