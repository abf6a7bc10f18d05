import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bellman_ford_cost
from vesseltrace.pathfind import (
    CenterlinePath,
    DisjointSet,
    build_pair_queue,
    connect_segments,
    dijkstra_path,
    trace_paths,
)
from vesseltrace.skeleton import SkeletonPointSet, connected_components
from vesseltrace.volume import EPS_AFFINITY, Volume


def _affinity(data, spacing=(1, 1, 1)):
    return Volume.scalar(np.asarray(data, dtype=float), spacing)


def _labeled_set(points, labels, dims=(20, 20, 20), spacing=(1, 1, 1)):
    # labels are given in the order of `points`; the constructor sorts both
    skel = SkeletonPointSet.from_points(
        np.asarray(points), dims, spacing, label=np.asarray(labels)
    )
    return connected_components(skel)


# --------------------------------------------------------------------------
# dijkstra
# --------------------------------------------------------------------------


def test_dijkstra_src_equals_dst():
    vol = _affinity(np.ones((4, 4, 4)))
    path, cost = dijkstra_path(vol, (2, 1, 3), (2, 1, 3))
    assert path.tolist() == [[2, 1, 3]]
    assert cost == 0.0


def test_dijkstra_straight_line_under_uniform_affinity():
    vol = _affinity(np.ones((9, 3, 3)))
    path, cost = dijkstra_path(vol, (1, 1, 1), (7, 1, 1))
    assert path.tolist() == [[x, 1, 1] for x in range(1, 8)]
    assert cost == pytest.approx(6.0 / (1.0 + EPS_AFFINITY))


def test_dijkstra_prefers_high_affinity_detour():
    # a wall of near-zero affinity with one high-affinity doorway
    a = np.full((5, 5, 1), 1.0)
    a[2, :, 0] = 1e-5
    a[2, 3, 0] = 1.0
    path, _ = dijkstra_path(_affinity(a), (0, 0, 0), (4, 0, 0))
    assert [3, 3] in path[:, 1:].tolist() or [2, 3] in path[:, :2].tolist()
    assert (2, 3, 0) in {tuple(p) for p in path.tolist()}


def test_dijkstra_validates_inputs():
    vol = _affinity(np.ones((3, 3, 3)))
    with pytest.raises(ValueError, match="outside"):
        dijkstra_path(vol, (0, 0, 0), (3, 0, 0))
    with pytest.raises(ValueError, match="nonnegative"):
        dijkstra_path(_affinity(-np.ones((3, 3, 3))), (0, 0, 0), (1, 0, 0))


def test_dijkstra_forbidden_region_unreachable():
    a = np.ones((5, 3, 3))
    forbidden = np.zeros((5, 3, 3), dtype=bool)
    forbidden[2, :, :] = True
    with pytest.raises(ValueError, match="no route"):
        dijkstra_path(_affinity(a), (0, 1, 1), (4, 1, 1), forbidden=forbidden)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dijkstra_cost_matches_exhaustive_relaxation_exactly(seed):
    rng = np.random.default_rng(seed)
    shape = (4, 4, 4)
    a = rng.uniform(0.0, 1.0, shape)
    spacing = tuple(float(s) for s in rng.uniform(0.5, 1.5, 3))
    src = tuple(int(v) for v in rng.integers(0, 4, 3))
    dst = tuple(int(v) for v in rng.integers(0, 4, 3))
    _, cost = dijkstra_path(_affinity(a, spacing), src, dst)
    assert cost == bellman_ford_cost(a, spacing, src, dst)


def test_dijkstra_path_is_26_connected_and_cost_consistent():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.1, 1.0, (6, 6, 6))
    sp = (0.8, 1.0, 1.3)
    path, cost = dijkstra_path(_affinity(a, sp), (0, 0, 0), (5, 5, 5))
    steps = np.abs(np.diff(path, axis=0))
    assert (steps.max(axis=1) == 1).all()
    total = 0.0
    for prev, cur in zip(path[:-1], path[1:]):
        step = math.sqrt(sum(((c - p) * s) ** 2 for c, p, s in zip(cur, prev, sp)))
        total = total + step / (EPS_AFFINITY + a[tuple(cur)])
    assert total == cost


def test_dijkstra_monotone_in_affinity():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.05, 1.0, (5, 5, 5))
    base = dijkstra_path(_affinity(a), (0, 0, 0), (4, 4, 4))[1]
    for _ in range(20):
        b = a.copy()
        v = tuple(rng.integers(0, 5, 3))
        b[v] = min(1.0, b[v] + rng.uniform(0.1, 1.0))
        raised = dijkstra_path(_affinity(b), (0, 0, 0), (4, 4, 4))[1]
        assert raised <= base + 1e-12


# --------------------------------------------------------------------------
# pair queue
# --------------------------------------------------------------------------


def test_pair_queue_one_component_per_label_is_empty():
    skel = _labeled_set([(0, 0, 0), (1, 0, 0), (5, 5, 5), (6, 5, 5)], [1, 1, 2, 2])
    assert build_pair_queue(skel) == []


def test_pair_queue_different_labels_never_pair():
    skel = _labeled_set([(0, 0, 0), (1, 0, 0), (8, 0, 0), (9, 0, 0)], [1, 1, 2, 2])
    assert build_pair_queue(skel) == []


def test_pair_queue_two_collinear_segments():
    pts = [(x, 0, 0) for x in range(0, 4)] + [(x, 0, 0) for x in range(9, 13)]
    skel = _labeled_set(pts, [1] * 8)
    queue = build_pair_queue(skel)
    # 2 tips per component: 4 cross pairs, closest first
    assert len(queue) == 4
    first = queue[0]
    assert first.endpoint_a == (3, 0, 0) and first.endpoint_b == (9, 0, 0)
    assert first.euclidean_gap == pytest.approx(6.0)
    assert first.component_a != first.component_b
    gaps = [e.euclidean_gap for e in queue]
    assert gaps == sorted(gaps)
    assert gaps[-1] == pytest.approx(12.0)


def test_pair_queue_respects_spacing():
    pts = [(0, 0, 0), (1, 0, 0), (4, 0, 0), (5, 0, 0)]
    skel = _labeled_set(pts, [3] * 4, spacing=(2.0, 1.0, 1.0))
    queue = build_pair_queue(skel)
    assert queue[0].euclidean_gap == pytest.approx(6.0)  # 3 voxels * 2 mm


# --------------------------------------------------------------------------
# reconnection
# --------------------------------------------------------------------------


def _uniform_cost(dims=(20, 20, 20)):
    return _affinity(np.full(dims, 0.5))


def test_connect_two_segments_bridges_the_gap():
    pts = [(x, 3, 3) for x in range(0, 5)] + [(x, 3, 3) for x in range(10, 15)]
    skel = _labeled_set(pts, [1] * 10)
    paths = connect_segments(skel, _uniform_cost())
    assert len(paths) == 1
    p = paths[0]
    assert p.label == 1
    assert len(p.bridged_spans) == 1
    s, e = p.bridged_spans[0]
    assert e - s + 1 == 5  # five new voxels fill the (5,3,3)..(9,3,3) gap
    pset = {tuple(q) for q in p.points.tolist()}
    assert (0, 3, 3) in pset and (14, 3, 3) in pset


def test_connect_three_segments_builds_two_bridges_and_skips_third_pair():
    pts = (
        [(x, 2, 2) for x in range(0, 4)]
        + [(x, 2, 2) for x in range(7, 11)]
        + [(x, 2, 2) for x in range(14, 18)]
    )
    skel = _labeled_set(pts, [1] * 12)
    assert skel.component.max() == 3
    paths = connect_segments(skel, _uniform_cost())
    assert len(paths) == 1
    # two gaps of 3 voxels each were bridged; the far A-C pairs were skipped
    assert len(paths[0].bridged_spans) == 2
    bridged = sum(e - s + 1 for s, e in paths[0].bridged_spans)
    assert bridged == 6


def test_connect_already_connected_is_identity_trace():
    pts = [(x, 2, 2) for x in range(6)]
    skel = _labeled_set(pts, [2] * 6)
    paths = connect_segments(skel, _uniform_cost())
    assert len(paths) == 1
    assert paths[0].bridged_spans == ()
    assert paths[0].points.tolist() == [[x, 2, 2] for x in range(6)]


def test_connect_at_most_components_minus_one_bridges_per_label():
    rng = np.random.default_rng(7)
    pts, labels = [], []
    for lab, y in ((1, 2), (2, 8)):
        for start in (0, 6, 12):
            seg = [(start + i, y, 3) for i in range(3)]
            pts += seg
            labels += [lab] * 3
    skel = _labeled_set(pts, labels)
    paths = connect_segments(skel, _uniform_cost())
    by_label = {}
    for p in paths:
        by_label.setdefault(p.label, []).append(p)
    for lab, group in by_label.items():
        assert sum(len(p.bridged_spans) for p in group) <= 2  # 3 components - 1


def test_connect_refuses_false_positives():
    skel = _labeled_set([(0, 0, 0), (5, 5, 5)], [0, 1])
    with pytest.raises(ValueError, match="false positives"):
        connect_segments(skel, _uniform_cost())


def test_connect_output_satisfies_path_invariants():
    ptsA = [(x, 2, 2) for x in range(0, 4)]
    ptsB = [(x, 4, 4) for x in range(8, 12)]
    skel = _labeled_set(ptsA + ptsB, [1] * 8)
    for p in connect_segments(skel, _uniform_cost()):
        steps = np.abs(np.diff(p.points, axis=0))
        if len(p.points) > 1:
            assert (steps.max(axis=1) == 1).all()
            assert (steps.sum(axis=1) > 0).all()


# --------------------------------------------------------------------------
# tracing
# --------------------------------------------------------------------------


def test_trace_splits_at_branch_point():
    trunk = [(2, 2, z) for z in range(2, 7)]
    arm_a = [(2, 3, 7), (2, 4, 8)]
    arm_b = [(2, 1, 7), (2, 0, 8)]
    skel = _labeled_set(trunk + arm_a + arm_b, [4] * 9, dims=(12, 12, 12))
    paths = trace_paths(skel)
    assert len(paths) == 3
    # the branch voxel (2, 2, 6) is shared by all three polylines
    for p in paths:
        assert (2, 2, 6) in {tuple(q) for q in p.points.tolist()}
        assert p.label == 4


def test_trace_isolated_point_and_cycle():
    # a diamond ring: consecutive points adjacent, opposite corners not
    cycle = [(2, 2, 2), (3, 3, 2), (2, 4, 2), (1, 3, 2)]
    lone = [(8, 8, 8)]
    skel = _labeled_set(cycle + lone, [1] * 5, dims=(12, 12, 12))
    paths = trace_paths(skel)
    assert sorted(len(p.points) for p in paths) == [1, 5]  # loop closes on itself


def test_centerline_path_invariant_validation():
    with pytest.raises(ValueError, match="26-adjacent"):
        CenterlinePath(1, [(0, 0, 0), (2, 0, 0)])
    with pytest.raises(ValueError, match="repeat"):
        CenterlinePath(1, [(0, 0, 0), (0, 0, 0)])


def test_disjoint_set_merging():
    uf = DisjointSet()
    assert uf.find(4) == 4
    uf.union(1, 2)
    uf.union(2, 3)
    assert uf.find(3) == uf.find(1)
    assert uf.find(4) != uf.find(1)
