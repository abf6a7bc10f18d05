"""Synthetic vascular trees with exact ground truth, plus a corruption oracle.

generate_tree builds a connected tubular tree (piecewise cubic branch curves,
linearly tapering radii) rasterized into a binary mask, with per-branch
labeled centerline polylines and a per-voxel radius field. corrupt simulates
a segmenter's failure modes: cylindrical deletions (gaps) along interior
centerline stretches and disconnected spherical false-positive blobs.
Everything is a pure function of its parameters and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .volume import Volume, nearest_point_field

FALSE_POSITIVE_LABEL = 0


@dataclass(frozen=True)
class Centerline:
    """One branch: continuous voxel-coordinate polyline with per-point radii."""

    label: int
    points: np.ndarray   # (M, 3) float voxel coordinates
    radii_mm: np.ndarray  # (M,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        rad = np.asarray(self.radii_mm, dtype=np.float64).reshape(-1)
        if len(pts) != len(rad):
            raise ValueError("points and radii lengths differ")
        pts.setflags(write=False)
        rad.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "radii_mm", rad)


@dataclass(frozen=True)
class VesselPhantom:
    mask: Volume
    radius_field: Volume
    centerlines: tuple
    labels: dict

    def all_samples(self):
        """Concatenated centerline samples, their radii, and per-branch offsets."""
        pts = np.vstack([c.points for c in self.centerlines])
        rad = np.concatenate([c.radii_mm for c in self.centerlines])
        offsets = np.cumsum([0] + [len(c.points) for c in self.centerlines])
        return pts, rad, offsets


@dataclass(frozen=True)
class CorruptionSpec:
    gap_count: int = 0
    gap_length_voxels: tuple = (3, 6)
    fp_blob_count: int = 0
    fp_blob_radius_voxels: tuple = (2, 4)
    rng_seed: int = 0

    def __post_init__(self):
        if self.gap_count < 0 or self.fp_blob_count < 0:
            raise ValueError("corruption counts must be nonnegative")
        for name, (lo, hi) in (
            ("gap_length_voxels", self.gap_length_voxels),
            ("fp_blob_radius_voxels", self.fp_blob_radius_voxels),
        ):
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} range must be nonempty and positive")


@dataclass(frozen=True)
class GapRecord:
    label: int
    start_point: tuple
    end_point: tuple
    length_voxels: int
    deleted_voxels: int


@dataclass(frozen=True)
class BlobRecord:
    center: tuple
    radius_voxels: int
    voxel_count: int


@dataclass(frozen=True)
class CorruptionResult:
    mask: Volume
    gaps: tuple
    blobs: tuple

    def report_dict(self) -> dict:
        return {
            "gaps": [
                {
                    "label": g.label,
                    "start_point": list(g.start_point),
                    "end_point": list(g.end_point),
                    "length_voxels": g.length_voxels,
                    "deleted_voxels": g.deleted_voxels,
                }
                for g in self.gaps
            ],
            "blobs": [
                {
                    "center": list(b.center),
                    "radius_voxels": b.radius_voxels,
                    "voxel_count": b.voxel_count,
                }
                for b in self.blobs
            ],
        }


def _unit(v):
    n = float(np.linalg.norm(v))
    if n == 0:
        return np.array([1.0, 0.0, 0.0])
    return v / n


def _perp_basis(t):
    a = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(t, a))
    v = _unit(np.cross(t, u))
    return u, v


def _spline_points(ctrl_mm: np.ndarray, pitch_mm: float) -> np.ndarray:
    """Natural cubic through the control points, resampled at uniform arclength."""
    seg = np.linalg.norm(np.diff(ctrl_mm, axis=0), axis=1)
    if seg.sum() == 0:
        return ctrl_mm[:1].copy()
    t = np.concatenate([[0.0], np.cumsum(seg)])
    cs = CubicSpline(t, ctrl_mm, axis=0, bc_type="natural")
    dense = cs(np.linspace(0.0, t[-1], 40 * len(ctrl_mm)))
    arcs = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    total = arcs[-1]
    m = max(2, int(round(total / pitch_mm)) + 1)
    s = np.linspace(0.0, total, m)
    out = np.empty((m, 3))
    for a in range(3):
        out[:, a] = np.interp(s, arcs, dense[:, a])
    return out


def _stamp_tube(mask: np.ndarray, spacing: np.ndarray, pts_vox: np.ndarray, radii_mm: np.ndarray):
    dims = np.asarray(mask.shape)
    for p, r in zip(pts_vox, radii_mm):
        rv = r / spacing
        lo = np.maximum(np.ceil(p - rv), 0).astype(np.int64)
        hi = np.minimum(np.floor(p + rv), dims - 1).astype(np.int64)
        if (hi < lo).any():
            continue
        ax = (np.arange(lo[0], hi[0] + 1) - p[0]) * spacing[0]
        ay = (np.arange(lo[1], hi[1] + 1) - p[1]) * spacing[1]
        az = (np.arange(lo[2], hi[2] + 1) - p[2]) * spacing[2]
        d2 = ax[:, None, None] ** 2 + ay[None, :, None] ** 2 + az[None, None, :] ** 2
        sub = mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        sub[d2 <= r * r] = 1


def generate_tree(
    dims,
    spacing,
    branch_count: int = 1,
    tortuosity: float = 0.0,
    radius_range_mm=(1.0, 2.5),
    rng_seed: int = 0,
) -> VesselPhantom:
    """Deterministic tubular tree rasterized into a mask with ground truth.

    A voxel is in the mask iff its center lies within the local radius of
    some centerline sample. Branch labels start at 1 (0 is reserved for
    false positives). tortuosity in [0, 1] scales the control-point jitter;
    at 0 the root is an exactly straight tube along the longest axis, snapped
    to voxel centers. Radii taper linearly and stay within radius_range_mm.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 16:
        raise ValueError("dims must be at least 16 voxels per axis")
    if branch_count < 1:
        raise ValueError("branch_count must be >= 1")
    if not 0.0 <= tortuosity <= 1.0:
        raise ValueError("tortuosity must lie in [0, 1]")
    r_min, r_max = (float(r) for r in radius_range_mm)
    if not 0.0 < r_min <= r_max:
        raise ValueError("radius_range_mm must satisfy 0 < min <= max")
    sp = np.asarray(spacing, dtype=np.float64)
    if (sp <= 0).any():
        raise ValueError("spacing must be strictly positive")

    # A tube thinner than half the voxel diagonal cannot be rasterized so
    # that every centerline point lands inside a mask voxel.
    half_diag = 0.5 * float(np.linalg.norm(sp))
    if r_min < half_diag:
        raise ValueError(
            f"phantom does not fit: minimum radius {r_min} mm is below half a "
            f"voxel diagonal ({half_diag:.3f} mm)"
        )

    extent = (np.asarray(dims) - 1) * sp
    margin = r_max + sp
    lo, hi = margin, extent - margin
    if (hi - lo <= 4 * sp).any():
        raise ValueError("phantom does not fit: radii leave no interior room")

    rng = np.random.default_rng(rng_seed)
    pitch = 0.4 * float(sp.min())
    jitter = tortuosity * 0.18 * float(np.min(hi - lo))

    branches = []  # dicts: pts_mm, radii, arcs

    axis = int(np.argmax(hi - lo))
    base = 0.5 * (lo + hi)
    for a in range(3):
        if a != axis:
            base[a] = np.clip(np.round(base[a] / sp[a]) * sp[a], lo[a], hi[a])
    p0, p1 = base.copy(), base.copy()
    p0[axis], p1[axis] = lo[axis], hi[axis]
    ctrl = np.linspace(p0, p1, 6)
    ctrl[1:-1] += rng.normal(0.0, 1.0, (4, 3)) * jitter
    np.clip(ctrl, lo, hi, out=ctrl)
    pts = np.clip(_spline_points(ctrl, pitch), lo, hi)
    radii = np.linspace(r_max, max(r_min, 0.55 * r_max), len(pts))
    arcs = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    branches.append({"pts": pts, "radii": radii, "arcs": arcs})

    for b in range(1, branch_count):
        placed = False
        for _ in range(200):
            parent = branches[int(rng.integers(len(branches)))]
            t = rng.uniform(0.25, 0.7)
            ai = int(np.searchsorted(parent["arcs"], t * parent["arcs"][-1]))
            ai = min(ai, len(parent["pts"]) - 2)
            attach = parent["pts"][ai]
            tangent = _unit(parent["pts"][min(ai + 1, len(parent["pts"]) - 1)] - parent["pts"][max(ai - 1, 0)])
            u, v = _perp_basis(tangent)
            polar = rng.uniform(np.deg2rad(30.0), np.deg2rad(60.0))
            azim = rng.uniform(0.0, 2.0 * np.pi)
            dvec = np.cos(polar) * tangent + np.sin(polar) * (np.cos(azim) * u + np.sin(azim) * v)
            length = parent["arcs"][-1] * rng.uniform(0.35, 0.6)
            end = np.clip(attach + dvec * length, lo, hi)
            if np.linalg.norm(end - attach) < 8 * sp.min():
                continue
            ctrl = np.linspace(attach, end, 5)
            ctrl[1:-1] += rng.normal(0.0, 1.0, (3, 3)) * (0.5 * jitter)
            np.clip(ctrl, lo, hi, out=ctrl)
            pts = np.clip(_spline_points(ctrl, pitch), lo, hi)
            r_start = min(r_max, max(r_min, 0.8 * float(parent["radii"][ai])))
            radii = np.linspace(r_start, max(r_min, 0.55 * r_start), len(pts))
            arcs = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
            branches.append({"pts": pts, "radii": radii, "arcs": arcs})
            placed = True
            break
        if not placed:
            raise ValueError(f"phantom does not fit: could not place branch {b + 1}")

    mask = np.zeros(dims, dtype=np.uint8)
    for br in branches:
        _stamp_tube(mask, sp, br["pts"] / sp, br["radii"])

    centerlines = tuple(
        Centerline(i + 1, br["pts"] / sp, br["radii"]) for i, br in enumerate(branches)
    )
    all_pts = np.vstack([c.points for c in centerlines])
    all_radii = np.concatenate([c.radii_mm for c in centerlines])
    _, idx = nearest_point_field(dims, sp, all_pts)
    radius_field = all_radii[idx]

    labels = {FALSE_POSITIVE_LABEL: "false-positive"}
    labels.update({c.label: f"branch-{c.label}" for c in centerlines})
    return VesselPhantom(
        mask=Volume.mask(mask, sp),
        radius_field=Volume.scalar(radius_field, sp),
        centerlines=centerlines,
        labels=labels,
    )


def corrupt(phantom: VesselPhantom, spec: CorruptionSpec) -> CorruptionResult:
    """Delete gaps along interior centerline stretches and add FP blobs.

    Gaps remove exactly the mask voxels whose nearest centerline sample falls
    in the chosen span, so a gap severs its own branch without nicking
    neighbors; spans stay away from branch ends and bifurcations. Blobs are
    spheres (in voxel units) placed so they are not 26-adjacent to the true
    mask or to each other. Raises "corruption infeasible" after 1000 failed
    placement attempts.
    """
    rng = np.random.default_rng(spec.rng_seed)
    dims = np.asarray(phantom.mask.dims)
    sp = np.asarray(phantom.mask.spacing)
    work = np.array(phantom.mask.data)

    gaps = []
    if spec.gap_count > 0:
        all_pts, _, offsets = phantom.all_samples()
        _, idx_field = nearest_point_field(tuple(dims), sp, all_pts)
        # junction arclengths per branch: where a child's first point sits
        junctions = {}
        for child in phantom.centerlines[1:]:
            first = child.points[0]
            for bi, branch in enumerate(phantom.centerlines):
                if branch.label == child.label:
                    continue
                d = np.linalg.norm(branch.points - first, axis=1)
                j = int(np.argmin(d))
                if d[j] < 2.0:
                    junctions.setdefault(bi, []).append(j)
        chosen = {}  # branch index -> list of (a, b) sample spans
        for _ in range(spec.gap_count):
            placed = False
            for _attempt in range(1000):
                bi = int(rng.integers(len(phantom.centerlines)))
                branch = phantom.centerlines[bi]
                arc = np.concatenate(
                    [[0.0], np.cumsum(np.linalg.norm(np.diff(branch.points, axis=0), axis=1))]
                )
                total = arc[-1]
                glen = int(rng.integers(spec.gap_length_voxels[0], spec.gap_length_voxels[1] + 1))
                if total < 4 * glen:
                    continue
                center = rng.uniform(0.3, 0.7) * total
                a_arc, b_arc = center - glen / 2.0, center + glen / 2.0
                if a_arc < 2.0 or b_arc > total - 2.0:
                    continue
                near_junction = any(
                    a_arc - 3.0 <= arc[j] <= b_arc + 3.0 for j in junctions.get(bi, [])
                )
                if near_junction:
                    continue
                ia = int(np.searchsorted(arc, a_arc))
                ib = int(np.searchsorted(arc, b_arc))
                if ib <= ia:
                    continue
                overlap = any(
                    not (ib + 4 < pa or pb + 4 < ia) for pa, pb in chosen.get(bi, [])
                )
                if overlap:
                    continue
                g0, g1 = offsets[bi] + ia, offsets[bi] + ib
                sel = (idx_field >= g0) & (idx_field <= g1) & (work == 1)
                work[sel] = 0
                chosen.setdefault(bi, []).append((ia, ib))
                gaps.append(
                    GapRecord(
                        label=branch.label,
                        start_point=tuple(float(v) for v in branch.points[ia]),
                        end_point=tuple(float(v) for v in branch.points[ib]),
                        length_voxels=glen,
                        deleted_voxels=int(sel.sum()),
                    )
                )
                placed = True
                break
            if not placed:
                raise ValueError("corruption infeasible: could not place a gap")

    blobs = []
    true_mask = phantom.mask.data
    for _ in range(spec.fp_blob_count):
        placed = False
        for _attempt in range(1000):
            r = int(rng.integers(spec.fp_blob_radius_voxels[0], spec.fp_blob_radius_voxels[1] + 1))
            if (dims - 2 * (r + 2) <= 0).any():
                break
            center = np.array([int(rng.integers(r + 2, dims[a] - r - 2)) for a in range(3)])
            lo = center - (r + 2)
            hi = center + (r + 2)
            ax = np.arange(lo[0], hi[0] + 1) - center[0]
            ay = np.arange(lo[1], hi[1] + 1) - center[1]
            az = np.arange(lo[2], hi[2] + 1) - center[2]
            d2 = ax[:, None, None] ** 2 + ay[None, :, None] ** 2 + az[None, None, :] ** 2
            guard = d2 <= (r + 2) ** 2
            region_true = true_mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
            region_work = work[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
            if (region_true[guard] != 0).any() or (region_work[guard] != 0).any():
                continue
            ball = d2 <= r * r
            region_work[ball] = 1
            blobs.append(
                BlobRecord(
                    center=tuple(int(v) for v in center),
                    radius_voxels=r,
                    voxel_count=int(ball.sum()),
                )
            )
            placed = True
            break
        if not placed:
            raise ValueError("corruption infeasible: could not place a blob")

    return CorruptionResult(Volume.mask(work, sp), tuple(gaps), tuple(blobs))


def reference_labels(points, phantom: VesselPhantom, blobs=()) -> np.ndarray:
    """Ground-truth class per query point: nearest branch label, 0 inside blobs."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    all_pts, _, offsets = phantom.all_samples()
    sp = np.asarray(phantom.mask.spacing)
    d2 = ((pts[:, None, :] * sp - all_pts[None, :, :] * sp) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    branch_of_sample = np.zeros(len(all_pts), dtype=np.int64)
    for i, c in enumerate(phantom.centerlines):
        branch_of_sample[offsets[i]:offsets[i + 1]] = c.label
    labels = branch_of_sample[nearest]
    for b in blobs:
        center = np.asarray(b.center if isinstance(b, BlobRecord) else b["center"], dtype=np.float64)
        radius = b.radius_voxels if isinstance(b, BlobRecord) else b["radius_voxels"]
        inside = np.linalg.norm(pts - center, axis=1) <= radius + 1e-9
        labels[inside] = FALSE_POSITIVE_LABEL
    return labels


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def save_centerlines(centerlines, path) -> None:
    """Ground-truth centerline JSON: a list of {label, points, radii_mm}."""
    payload = [
        {
            "label": int(c.label),
            "points": [[float(v) for v in p] for p in c.points],
            "radii_mm": [float(r) for r in c.radii_mm],
        }
        for c in centerlines
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_centerlines(path):
    with open(path) as fh:
        payload = json.load(fh)
    return tuple(
        Centerline(int(e["label"]), np.asarray(e["points"]), np.asarray(e["radii_mm"]))
        for e in payload
    )


def save_corruption_report(result: CorruptionResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.report_dict(), fh, indent=2)
        fh.write("\n")


def load_corruption_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
