import logging
import math

import numpy as np
import pytest

from hyperdsf.forest import (
    CENSORED,
    Forest,
    UnsupportedDimension,
    brute_force_parents,
    build,
    find_parent_shell_search,
    parent_search,
    segments_cross,
    verify_noncrossing,
    verify_structure,
)
from hyperdsf.geometry import HPoint, hyp_distance
from hyperdsf.ppp import CloudFormatError, SampleWindow, replicate_seed, sample

from conftest import make_cloud

THREE = [(0.0, 1.0), (10.0, 1.5), (0.0, 2.0)]


def test_single_point_censored():
    f = build(make_cloud([(0.0, 1.0)]))
    assert f.parent[0] == -1
    assert not f.certified[0]
    assert math.isinf(f.rho[0])


def test_empty_cloud():
    f = build(make_cloud(np.empty((0, 2))))
    assert len(f) == 0
    assert verify_structure(f).ok
    assert verify_noncrossing(f).ok


def test_three_point_parents():
    cloud = make_cloud(THREE, R=20.0, y_hi=50.0)
    f = build(cloud)
    # points sorted by ordinate: (0,1), (10,1.5), (0,2)
    assert hyp_distance((0.0, 1.0), (0.0, 2.0)) == pytest.approx(math.log(2))
    assert hyp_distance((0.0, 1.0), (10.0, 1.5)) == pytest.approx(4.23, abs=5e-3)
    assert list(f.parent) == [2, 2, -1]
    assert f.rho[0] == pytest.approx(math.log(2))
    report = verify_structure(f)
    assert report.ok
    assert f.children_counts()[2] == 2
    assert report.degree_histogram == {0: 2, 2: 1}


def test_hyperbolic_not_euclidean_nearest():
    cloud = make_cloud([(0.0, 1.0), (0.5, 1.01), (0.0, 2.0)], R=20.0)
    d_near = hyp_distance((0.0, 1.0), (0.5, 1.01))
    assert d_near == pytest.approx(math.acosh(1 + 0.2501 / 2.02), rel=1e-12)
    assert d_near == pytest.approx(0.49262, abs=1e-5)
    assert d_near < math.log(2)
    assert build(cloud).parent[0] == 1
    assert find_parent_shell_search(HPoint((0.0,), 1.0), cloud)[0] == 1


def test_shell_search_censored():
    cloud = make_cloud([(0.0, 1.0), (0.0, 2.0)])
    assert find_parent_shell_search((0.0, 2.0), cloud) is CENSORED


def test_certification_rule():
    cloud = make_cloud(THREE, R=20.0, y_hi=50.0)
    f = build(cloud)
    y, x = cloud.points[:, 1], cloud.points[:, 0]
    for i in range(2):
        inside = y[i] * math.exp(f.rho[i]) <= 50.0 and abs(x[i]) + y[i] * math.sinh(f.rho[i]) <= 20.0
        assert bool(f.certified[i]) == inside
    # shrinking the top of the window uncertifies (10, 1.5): its semi-ball reaches y = 1.5 e^rho
    g = build(make_cloud(THREE, R=20.0, y_hi=2.5))
    assert not g.certified[1]
    assert g.certified[0]


@pytest.mark.parametrize("dim", [1, 2])
def test_matches_brute_force(dim):
    for r in range(40):
        w = SampleWindow(5.0, 0.2, 5.0) if dim == 1 else SampleWindow(2.0, 0.3, 3.0)
        cloud = sample(w, 3.0, replicate_seed(99 + dim, r), dim)
        f = build(cloud)
        ref, rho = brute_force_parents(cloud.points)
        assert np.array_equal(f.parent, ref)
        assert np.allclose(f.rho[ref >= 0], rho[ref >= 0], rtol=1e-14)


def test_shell_search_matches_brute_force():
    for r in range(200):
        cloud = sample(SampleWindow(4.0, 0.3, 4.0), 500 / SampleWindow(4.0, 0.3, 4.0).measure(1), replicate_seed(5, r))
        ref, _ = brute_force_parents(cloud.points)
        rng = np.random.default_rng(r)
        for i in rng.choice(len(cloud), size=min(5, len(cloud)), replace=False):
            got = find_parent_shell_search(cloud.points[i], cloud)
            assert (got is CENSORED and ref[i] == -1) or got[0] == ref[i]


def test_parent_search_external_queries():
    cloud = sample(SampleWindow(5.0, 0.2, 5.0), 3.0, 1)
    q = np.array([[0.0, 0.1], [1.0, 0.5 * cloud.points[-1, 1]], [0.0, 100.0]])
    parent, rho, _ = parent_search(cloud.points, q)
    pts = cloud.points
    for k in range(2):
        above = np.flatnonzero(pts[:, 1] > q[k, 1])
        d = [hyp_distance(q[k], pts[j]) for j in above]
        assert parent[k] == above[int(np.argmin(d))]
    assert parent[2] == -1 and math.isinf(rho[2])


def test_tie_broken_by_smallest_index(caplog):
    # (3, 2) and (3, 5) are at exactly the same distance from (0, 1):
    # |dz|^2 / (4 y y') is 10/8 = 25/20 = 1.25 for both
    pts = [(0.0, 1.0), (3.0, 2.0), (3.0, 5.0), (0.0, 50.0)]
    assert hyp_distance(pts[0], pts[1]) == hyp_distance(pts[0], pts[2])
    parent, _, ties = parent_search(np.array(pts))
    assert parent[0] == 1
    assert ties and ties[0] == (0, 1, 2)
    with caplog.at_level(logging.WARNING):
        f = build(make_cloud(pts, R=20.0))
    assert f.parent[0] == 1 and f.ties
    assert "tie" in caplog.text


def test_cycle_detected():
    f = build(make_cloud([(0.0, 1.0), (0.1, 2.0), (0.0, 3.0)], R=20.0))
    parent = np.array(f.parent)
    parent[1], parent[2] = 2, 1
    bad = Forest(f.cloud, parent, f.rho, f.certified)
    report = verify_structure(bad)
    assert not report.ok
    cyc = [x for x in report.failures if x["check"] == "acyclic"]
    assert cyc and cyc[0]["vertices"] == [1, 2]


def test_semiball_violation_detected():
    cloud = make_cloud(THREE, R=20.0, y_hi=50.0)
    f = build(cloud)
    parent = np.array(f.parent)
    parent[0] = 1  # (10, 1.5) is farther than (0, 2), which now sits in the semi-ball
    rho = np.array(f.rho)
    rho[0] = hyp_distance(cloud.points[0], cloud.points[1])
    cert = np.array([True, False, False])
    report = verify_structure(Forest(cloud, parent, rho, cert))
    assert {"check": "empty_semiball", "vertex": 0} in report.failures


def test_synthetic_crossing():
    seg = np.array([[[0.0, 1.0], [1.0, 2.0]], [[1.0, 1.0], [0.0, 2.0]]])
    assert segments_cross(*seg[0], *seg[1])
    report = verify_noncrossing(segments=seg)
    assert not report.ok and report.crossings == [(0, 1)]
    # a shared endpoint is not a crossing
    seg2 = np.array([[[0.0, 1.0], [1.0, 2.0]], [[2.0, 1.0], [1.0, 2.0]]])
    assert verify_noncrossing(segments=seg2).ok
    assert verify_noncrossing(segments=seg[:1]).ok


def test_noncrossing_on_built_forests():
    w = SampleWindow(50.0, 1.0, math.exp(3))
    for r in range(100):
        f = build(sample(w, 1.0, replicate_seed(17, r)))
        assert verify_noncrossing(f).ok


def test_noncrossing_needs_d1():
    f = build(sample(SampleWindow(1.0, 0.5, 2.0), 3.0, 1, 2))
    with pytest.raises(UnsupportedDimension):
        verify_noncrossing(f)


def test_parent_ordinates_increase(small_traversal):
    f = small_traversal.forest
    has = f.parent >= 0
    assert np.all(f.points[f.parent[has], -1] > f.points[has, -1])


def test_dilation_and_translation_keep_parents():
    cloud = sample(SampleWindow(10.0, 0.1, 10.0), 1.0, 21)
    f = build(cloud)
    for other in (cloud.dilated(math.exp(1.3)), cloud.translated(-7.5)):
        g = build(other)
        assert np.array_equal(f.parent, g.parent)
        assert np.array_equal(f.certified, g.certified)
        assert np.allclose(f.rho, g.rho, rtol=1e-12)


def test_json_round_trip():
    f = build(sample(SampleWindow(3.0, 0.5, 3.0), 2.0, 3))
    g = Forest.from_json(f.to_json())
    assert np.array_equal(f.parent, g.parent)
    assert np.array_equal(f.certified, g.certified)
    assert np.array_equal(f.rho[f.parent >= 0], g.rho[g.parent >= 0])


def test_json_errors():
    f = build(make_cloud(THREE, R=20.0))
    doc = f.to_dict()
    del doc["parents"][1]["certified"]
    with pytest.raises(CloudFormatError, match="certified"):
        Forest.from_dict(doc)
    with pytest.raises(CloudFormatError, match="line"):
        Forest.from_json("{")


def test_arrays_read_only():
    f = build(make_cloud(THREE))
    with pytest.raises(ValueError):
        f.parent[0] = 1
