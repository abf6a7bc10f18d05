import numpy as np
import pytest
import scipy.ndimage as ndi

from oracles import STRUCT_26
from vesseltrace.phantom import (
    CorruptionSpec,
    corrupt,
    generate_tree,
    load_centerlines,
    reference_labels,
    save_centerlines,
)
from vesseltrace.skeleton import connected_components, thin
from vesseltrace.volume import save_volume


def _straight_tube(dims=(48, 24, 24), radius=1.5, seed=0):
    return generate_tree(
        dims, (1, 1, 1), branch_count=1, tortuosity=0.0,
        radius_range_mm=(radius, radius), rng_seed=seed,
    )


def test_straight_tube_thins_to_one_component():
    ph = _straight_tube()
    assert ph.mask.data.sum() > 0
    skel = connected_components(thin(ph.mask))
    assert skel.component.max() == 1


def test_same_seed_is_byte_identical(tmp_path):
    a = generate_tree((32, 32, 32), (1, 1, 1), 2, 0.4, (1.0, 2.0), rng_seed=11)
    b = generate_tree((32, 32, 32), (1, 1, 1), 2, 0.4, (1.0, 2.0), rng_seed=11)
    save_volume(a.mask, tmp_path / "a")
    save_volume(b.mask, tmp_path / "b")
    assert (tmp_path / "a.raw").read_bytes() == (tmp_path / "b.raw").read_bytes()
    assert np.array_equal(a.radius_field.data, b.radius_field.data)
    for ca, cb in zip(a.centerlines, b.centerlines):
        assert np.array_equal(ca.points, cb.points)
        assert np.array_equal(ca.radii_mm, cb.radii_mm)


def test_three_branches_have_three_labels():
    ph = generate_tree((40, 40, 40), (1, 1, 1), 3, 0.3, (1.0, 2.0), rng_seed=2)
    labels = sorted(c.label for c in ph.centerlines)
    assert labels == [1, 2, 3]
    assert set(ph.labels) == {0, 1, 2, 3}
    assert ph.labels[0] == "false-positive"


def test_phantom_invariants():
    ph = generate_tree((32, 32, 32), (1, 1, 1), 2, 0.5, (1.0, 1.8), rng_seed=5)
    mask = ph.mask.data
    for c in ph.centerlines:
        vox = np.round(c.points).astype(int)
        assert (mask[vox[:, 0], vox[:, 1], vox[:, 2]] == 1).all()
        assert (c.radii_mm >= 1.0).all() and (c.radii_mm <= 1.8).all()
    on_mask = ph.radius_field.data[mask == 1]
    assert (on_mask > 0).all()


def test_generate_validates_inputs():
    with pytest.raises(ValueError, match="at least 16"):
        generate_tree((8, 32, 32), (1, 1, 1), 1, 0.0, (1.0, 2.0), 0)
    with pytest.raises(ValueError, match="does not fit"):
        generate_tree((16, 16, 16), (1, 1, 1), 1, 0.0, (6.0, 7.0), 0)
    with pytest.raises(ValueError, match="does not fit"):
        # sub-voxel radius cannot be rasterized faithfully
        generate_tree((32, 32, 32), (1, 1, 1), 1, 0.0, (0.2, 0.3), 0)
    with pytest.raises(ValueError):
        generate_tree((32, 32, 32), (1, 1, 1), 0, 0.0, (1.0, 2.0), 0)


def test_corruption_spec_validation():
    with pytest.raises(ValueError):
        CorruptionSpec(gap_count=-1)
    with pytest.raises(ValueError):
        CorruptionSpec(gap_length_voxels=(4, 2))
    with pytest.raises(ValueError):
        CorruptionSpec(fp_blob_radius_voxels=(0, 2))


def test_zero_corruption_is_identity():
    ph = _straight_tube()
    res = corrupt(ph, CorruptionSpec(rng_seed=1))
    assert np.array_equal(res.mask.data, ph.mask.data)
    assert res.gaps == () and res.blobs == ()


def test_single_gap_splits_skeleton_into_two_components():
    ph = _straight_tube(dims=(64, 24, 24), radius=2.0, seed=3)
    res = corrupt(
        ph, CorruptionSpec(gap_count=1, gap_length_voxels=(5, 5), rng_seed=3)
    )
    assert len(res.gaps) == 1
    skel = connected_components(thin(res.mask))
    assert skel.component.max() == 2


def test_two_blobs_add_two_disjoint_components():
    ph = _straight_tube()
    res = corrupt(
        ph,
        CorruptionSpec(fp_blob_count=2, fp_blob_radius_voxels=(2, 3), rng_seed=4),
    )
    assert len(res.blobs) == 2
    extra = (res.mask.data == 1) & (ph.mask.data == 0)
    n_extra = ndi.label(extra, structure=STRUCT_26)[1]
    assert n_extra == 2
    # blobs do not merge with the vessel: total components = 1 + 2
    assert ndi.label(res.mask.data, structure=STRUCT_26)[1] == 3


def test_corruption_only_removes_and_adds_disjointly():
    ph = generate_tree((40, 40, 40), (1, 1, 1), 2, 0.3, (1.2, 2.0), rng_seed=6)
    res = corrupt(
        ph,
        CorruptionSpec(
            gap_count=2, gap_length_voxels=(3, 5),
            fp_blob_count=1, fp_blob_radius_voxels=(2, 2), rng_seed=6,
        ),
    )
    out = res.mask.data.astype(int)
    true = ph.mask.data.astype(int)
    blob_vox = (out == 1) & (true == 0)
    assert blob_vox.sum() == sum(b.voxel_count for b in res.blobs)
    deleted = (out == 0) & (true == 1)
    assert deleted.sum() == sum(g.deleted_voxels for g in res.gaps)


def test_infeasible_corruption_raises():
    ph = _straight_tube(dims=(24, 16, 16), radius=1.0)
    with pytest.raises(ValueError, match="infeasible"):
        corrupt(ph, CorruptionSpec(fp_blob_count=4, fp_blob_radius_voxels=(6, 6), rng_seed=0))


def test_corruption_deterministic():
    ph = _straight_tube(seed=9)
    spec = CorruptionSpec(
        gap_count=1, gap_length_voxels=(4, 6),
        fp_blob_count=1, fp_blob_radius_voxels=(2, 3), rng_seed=42,
    )
    a = corrupt(ph, spec)
    b = corrupt(ph, spec)
    assert np.array_equal(a.mask.data, b.mask.data)
    assert a.report_dict() == b.report_dict()


def test_reference_labels_nearest_branch_and_blobs():
    ph = generate_tree((40, 40, 40), (1, 1, 1), 2, 0.0, (1.2, 2.0), rng_seed=8)
    res = corrupt(
        ph, CorruptionSpec(fp_blob_count=1, fp_blob_radius_voxels=(2, 2), rng_seed=8)
    )
    pts = [np.round(c.points[len(c.points) // 2]).astype(int) for c in ph.centerlines]
    pts.append(np.asarray(res.blobs[0].center))
    labels = reference_labels(np.asarray(pts), ph, blobs=res.blobs)
    assert labels.tolist() == [1, 2, 0]


def test_centerline_json_round_trip(tmp_path):
    ph = generate_tree((32, 32, 32), (1, 1, 1), 2, 0.2, (1.0, 1.6), rng_seed=1)
    path = tmp_path / "centerlines.json"
    save_centerlines(ph.centerlines, path)
    again = load_centerlines(path)
    assert len(again) == len(ph.centerlines)
    for ca, cb in zip(again, ph.centerlines):
        assert ca.label == cb.label
        assert np.allclose(ca.points, cb.points)
        assert np.allclose(ca.radii_mm, cb.radii_mm)
