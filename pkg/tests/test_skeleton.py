import numpy as np
import pytest
import scipy.ndimage as ndi
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    STRUCT_26,
    closure_components,
    deletable_points,
    topology_counts,
)
from vesseltrace.phantom import generate_tree
from vesseltrace.skeleton import (
    SkeletonPointSet,
    connected_components,
    endpoints,
    load_points_csv,
    resample,
    save_points_csv,
    thin,
)
from vesseltrace.volume import Volume


def _mask(data, spacing=(1, 1, 1)):
    return Volume.mask(np.asarray(data, dtype=np.uint8), spacing)


def _random_mask(seed, shape=(7, 7, 7), p=0.35):
    rng = np.random.default_rng(seed)
    return _mask(rng.uniform(size=shape) < p)


# --------------------------------------------------------------------------
# thinning
# --------------------------------------------------------------------------


def test_thin_single_voxel_unchanged():
    m = np.zeros((5, 5, 5), dtype=np.uint8)
    m[2, 2, 2] = 1
    out = thin(_mask(m))
    assert np.array_equal(out.data, m)


def test_thin_unit_line_unchanged():
    m = np.zeros((1, 1, 20), dtype=np.uint8)
    m[0, 0, :] = 1
    out = thin(_mask(m))
    assert np.array_equal(out.data, m)


def test_thin_empty_mask():
    out = thin(_mask(np.zeros((4, 4, 4))))
    assert out.data.sum() == 0


def test_thin_solid_tube_gives_centered_unit_width_curve():
    # 3x3x20 solid bar inside a 5x5x24 grid, axis at x=2, y=2, z in [2, 21]
    m = np.zeros((5, 5, 24), dtype=np.uint8)
    m[1:4, 1:4, 2:22] = 1
    out = thin(_mask(m))
    pts = np.argwhere(out.data)
    assert len(pts) > 0
    assert (m[tuple(pts.T)] == 1).all()  # subset of the input
    assert deletable_points(out.data) == []  # unit width: nothing left to delete
    fg_before, bg_before = topology_counts(m)
    fg_after, bg_after = topology_counts(out.data)
    assert (fg_before, bg_before) == (fg_after, bg_after)
    # every skeleton point within one voxel of the bar axis
    axis_dist = np.hypot(pts[:, 0] - 2.0, pts[:, 1] - 2.0)
    mid = (pts[:, 2] >= 2) & (pts[:, 2] <= 21)
    assert mid.all()
    assert (axis_dist <= 1.0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_thin_soundness_on_random_masks(seed):
    vol = _random_mask(seed)
    out = thin(vol)
    assert (out.data <= vol.data).all()  # subset
    # topology: 26-connected foreground and 6-connected background preserved
    assert topology_counts(vol.data) == topology_counts(out.data)
    # thinness: no deletable simple points remain
    assert deletable_points(out.data) == []
    # idempotence
    again = thin(out)
    assert np.array_equal(again.data, out.data)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_thin_preserves_components_on_phantoms(seed):
    ph = generate_tree(
        (24, 24, 24),
        (1, 1, 1),
        branch_count=1 + seed % 3,
        tortuosity=(seed % 4) / 6.0,
        radius_range_mm=(1.0, 1.8),
        rng_seed=seed,
    )
    out = thin(ph.mask)
    n_before = ndi.label(ph.mask.data, structure=STRUCT_26)[1]
    n_after = ndi.label(out.data, structure=STRUCT_26)[1]
    assert n_before == n_after


def test_thin_rejects_scalar_volume():
    with pytest.raises(ValueError):
        thin(Volume.scalar(np.zeros((3, 3, 3)), (1, 1, 1)))


# --------------------------------------------------------------------------
# connected components
# --------------------------------------------------------------------------


def test_components_two_disjoint_lines():
    m = np.zeros((8, 5, 5), dtype=np.uint8)
    m[1:7, 1, 1] = 1
    m[1:7, 3, 3] = 1
    skel = connected_components(_mask(m))
    assert skel.component.max() == 2
    # deterministic numbering by lexicographically smallest member
    first = skel.points[skel.component == 1]
    assert (first[:, 1] == 1).all()


def test_components_empty():
    skel = connected_components(_mask(np.zeros((4, 4, 4))))
    assert len(skel) == 0
    assert skel.component.size == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_components_match_transitive_closure_oracle(seed):
    vol = _random_mask(seed, shape=(6, 6, 6), p=0.3)
    skel = connected_components(vol)
    got = frozenset(
        frozenset(map(tuple, skel.points[skel.component == c].tolist()))
        for c in np.unique(skel.component)
    )
    expected = closure_components(np.argwhere(vol.data))
    assert got == expected


def test_components_invariant_to_point_ordering():
    rng = np.random.default_rng(3)
    pts = np.unique(rng.integers(0, 6, (40, 3)), axis=0)
    a = connected_components(SkeletonPointSet.from_points(pts, (6, 6, 6), (1, 1, 1)))
    b = connected_components(
        SkeletonPointSet.from_points(pts[::-1], (6, 6, 6), (1, 1, 1))
    )
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.component, b.component)


# --------------------------------------------------------------------------
# endpoints
# --------------------------------------------------------------------------


def _skel_from_points(pts, dims=(12, 12, 12)):
    return connected_components(
        SkeletonPointSet.from_points(np.asarray(pts), dims, (1, 1, 1))
    )


def test_endpoints_straight_line_has_two_tips():
    pts = [(2, 2, z) for z in range(1, 11)]
    tips = endpoints(_skel_from_points(pts))
    assert sorted(p for p, _ in tips) == [(2, 2, 1), (2, 2, 10)]


def test_endpoints_y_shape_has_three():
    pts = [(2, 2, z) for z in range(2, 7)]  # trunk, tip at (2, 2, 2)
    pts += [(2, 3, 7), (2, 4, 8), (2, 5, 9)]  # upper arm
    pts += [(2, 1, 7), (2, 0, 8), (2, 0, 9)]  # lower arm
    tips = endpoints(_skel_from_points(pts))
    assert sorted(p for p, _ in tips) == [(2, 0, 9), (2, 2, 2), (2, 5, 9)]


def test_endpoints_cycle_has_none():
    # a diamond ring: every point has 26-degree exactly 2
    pts = [(2, 2, 2), (3, 3, 2), (2, 4, 2), (1, 3, 2)]
    assert endpoints(_skel_from_points(pts)) == []


def test_endpoints_isolated_point_is_its_own_tip():
    tips = endpoints(_skel_from_points([(4, 4, 4)]))
    assert tips == [((4, 4, 4), 1)]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_endpoints_subset_with_low_degree(seed):
    vol = _random_mask(seed, shape=(6, 6, 6), p=0.25)
    skel = connected_components(vol)
    pset = set(map(tuple, skel.points.tolist()))
    from oracles import ALL_OFFSETS_26

    for p, _ in endpoints(skel):
        assert p in pset
        deg = sum(
            (p[0] + dx, p[1] + dy, p[2] + dz) in pset for dx, dy, dz in ALL_OFFSETS_26
        )
        assert deg <= 1


# --------------------------------------------------------------------------
# resample
# --------------------------------------------------------------------------


def _two_component_set(n_a, n_b):
    pts = [(x, 0, 0) for x in range(n_a)] + [(x, 4, 4) for x in range(n_b)]
    return _skel_from_points(pts, dims=(max(n_a, n_b) + 1, 8, 8))


def test_resample_identity_when_small():
    skel = _two_component_set(50, 50)
    assert resample(skel, 3000) is skel


def test_resample_proportional_90_10():
    skel = _two_component_set(90, 10)
    out = resample(skel, 10)
    assert len(out) == 10
    sizes = {c: int((out.component == c).sum()) for c in np.unique(out.component)}
    assert sizes == {1: 9, 2: 1}


def test_resample_halves_equal_components():
    skel = _two_component_set(3000, 3000)
    out = resample(skel, 3000)
    assert len(out) == 3000
    sizes = [int((out.component == c).sum()) for c in np.unique(out.component)]
    assert all(abs(s - 1500) <= 1 for s in sizes)


def test_resample_exact_target_and_determinism():
    skel = _two_component_set(137, 41)
    a = resample(skel, 60, rng_seed=9)
    b = resample(skel, 60, rng_seed=9)
    assert len(a) == 60
    assert np.array_equal(a.points, b.points)
    # every component keeps at least one point
    assert set(np.unique(a.component)) == {1, 2}


def test_resample_errors():
    skel = _two_component_set(5, 5)
    with pytest.raises(ValueError):
        resample(skel, 0)
    with pytest.raises(ValueError):
        resample(skel, 1)  # two components cannot fit in one point


# --------------------------------------------------------------------------
# CSV round trip
# --------------------------------------------------------------------------


def test_points_csv_round_trip(tmp_path):
    skel = _two_component_set(6, 3)
    labeled = skel.with_labels(np.where(skel.component == 1, 2, 0))
    path = tmp_path / "skel.csv"
    save_points_csv(labeled, path)
    text = path.read_text().splitlines()
    assert text[0] == "x,y,z,component,label"
    again = load_points_csv(path, labeled.dims, labeled.spacing)
    assert np.array_equal(again.points, labeled.points)
    assert np.array_equal(again.component, labeled.component)
    assert np.array_equal(again.label, labeled.label)


def test_point_set_rejects_duplicates_and_out_of_bounds():
    with pytest.raises(ValueError):
        SkeletonPointSet.from_points([(1, 1, 1), (1, 1, 1)], (4, 4, 4), (1, 1, 1))
    with pytest.raises(ValueError):
        SkeletonPointSet.from_points([(4, 0, 0)], (4, 4, 4), (1, 1, 1))
