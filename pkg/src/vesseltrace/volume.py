"""Dense 3D voxel grids and the scalar fields that drive path extraction.

Grids are indexed ``data[x, y, z]``; the physical position of a voxel center
is ``index * spacing`` in millimetres (origin at the center of voxel 0,0,0).
Scalar volumes hold float64 in memory and serialize as little-endian f32;
binary masks hold uint8 (values 0/1) and serialize as u8. Payload files are
written x-fastest, i.e. the Fortran ravel of the (nx, ny, nz) array.

Volumes are immutable after construction (the data buffer is marked
read-only), so they are safe to share across threads. All constructions here
are pure, single-threaded functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BINARY_MASK = "binary-mask"
SCALAR_FIELD = "scalar-field"

#: Regularizer for the affinity-to-cost inversion: the traversal cost of
#: entering voxel v from a 26-neighbor is step_mm / (EPS_AFFINITY + A(v)),
#: so high affinity means low cost and zero affinity stays finite.
EPS_AFFINITY = 1e-6

_HEADER_KEYS = ("dims", "spacing", "dtype", "order", "endianness")


@dataclass(frozen=True)
class Volume:
    """Immutable dense 3D grid with anisotropic voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple
    kind: str

    def __post_init__(self):
        if self.kind not in (BINARY_MASK, SCALAR_FIELD):
            raise ValueError(f"unknown volume kind {self.kind!r}")
        raw = np.asarray(self.data)
        if raw.ndim != 3 or min(raw.shape) < 1:
            raise ValueError("volume data must be a non-empty 3D array")
        if self.kind == BINARY_MASK:
            if not np.isin(raw, (0, 1)).all():
                raise ValueError("binary mask may contain only values 0 and 1")
            data = np.array(raw, dtype=np.uint8)
        else:
            data = np.array(raw, dtype=np.float64)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError("spacing must be three strictly positive reals (mm)")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def mask(cls, data, spacing) -> "Volume":
        return cls(data, spacing, BINARY_MASK)

    @classmethod
    def scalar(cls, data, spacing) -> "Volume":
        return cls(data, spacing, SCALAR_FIELD)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def same_grid(self, other: "Volume") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing


@dataclass(frozen=True)
class HeatmapParams:
    """Knobs for the centerline heatmap and the path-affinity map.

    low_value is the constant written outside the vessel radius (a step-down
    below every in-vessel value); combine_skeleton_value is the affinity
    stamped at retained skeleton voxels and must dominate the heatmap's
    maximum of 1 so paths prefer existing skeleton.
    """

    low_value: float = 0.05
    combine_skeleton_value: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.low_value < 1.0:
            raise ValueError("low_value must lie in (0, 1)")
        if self.combine_skeleton_value < 1.0:
            raise ValueError("combine_skeleton_value must be >= 1")


def nearest_point_field(dims, spacing, points_vox):
    """Exact per-voxel nearest neighbor among a set of points.

    Returns ``(dist_mm, index)`` arrays of shape ``dims``. Positions are
    scaled to mm first (``coord * spacing``); the minimum is taken by a full
    chunked scan over all points, so the result matches a brute-force
    pairwise computation bit for bit. Ties resolve to the lowest point index.
    """
    pts = np.asarray(points_vox, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("no reference geometry")
    sp = np.asarray(spacing, dtype=np.float64)
    pts_mm = pts * sp

    nx, ny, nz = (int(d) for d in dims)
    gx, gy, gz = np.meshgrid(
        np.arange(nx, dtype=np.float64) * sp[0],
        np.arange(ny, dtype=np.float64) * sp[1],
        np.arange(nz, dtype=np.float64) * sp[2],
        indexing="ij",
    )
    coords_mm = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    n = coords_mm.shape[0]
    dist = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    chunk = max(1, 2_000_000 // pts.shape[0])
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        d2 = ((coords_mm[s:e, None, :] - pts_mm[None, :, :]) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)
        idx[s:e] = best
        dist[s:e] = np.sqrt(d2[np.arange(e - s), best])
    return dist.reshape((nx, ny, nz)), idx.reshape((nx, ny, nz))


def euclidean_distance_to_centerline(dims, spacing, centerlines) -> Volume:
    """Exact anisotropic Euclidean distance (mm) to the nearest polyline point.

    ``centerlines`` is a list of (M, 3) arrays of voxel coordinates; all
    points must lie inside the grid. Raises if no points are supplied.
    """
    polys = [np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in centerlines]
    polys = [p for p in polys if p.shape[0]]
    if not polys:
        raise ValueError("no reference geometry")
    pts = np.vstack(polys)
    upper = np.asarray(dims, dtype=np.float64) - 1.0
    if (pts < 0).any() or (pts > upper).any():
        bad = pts[((pts < 0) | (pts > upper)).any(axis=1)][0]
        raise ValueError(f"centerline point {bad.tolist()} lies outside the volume")
    dist, _ = nearest_point_field(dims, spacing, pts)
    return Volume.scalar(dist, spacing)


def build_heatmap(dist: Volume, radius_field: Volume, params: HeatmapParams) -> Volume:
    """Centerline heatmap: (R - d)/R inside the vessel radius, low_value outside.

    The in-vessel ramp is floored at low_value so the field stays within
    [low_value, 1] and is monotone non-increasing in d; it is maximal (1.0)
    exactly on the centerline. The degenerate case R = 0 with d = 0 is
    treated as an on-centerline point vessel (value 1).
    """
    if not dist.same_grid(radius_field):
        raise ValueError("distance and radius volumes disagree on dims/spacing")
    d = dist.data
    r = radius_field.data
    if (r < 0).any():
        raise ValueError("radius field must be nonnegative")
    ratio = np.zeros_like(d)
    np.divide(r - d, r, out=ratio, where=r > 0)
    h = np.full(d.shape, params.low_value, dtype=np.float64)
    inside = d <= r
    h[inside] = np.maximum(np.clip(ratio[inside], 0.0, 1.0), params.low_value)
    h[inside & (r == 0)] = 1.0
    return Volume.scalar(h, dist.spacing)


def build_cost_map(heatmap: Volume, labeled_skeleton, params: HeatmapParams) -> Volume:
    """Affinity map guiding minimal-cost paths.

    Retained skeleton voxels (label != 0, i.e. everything that is not a
    false positive) get combine_skeleton_value; all other voxels keep their
    heatmap value. Traversal cost of entering a voxel is
    step_mm / (EPS_AFFINITY + affinity), computed by the path search.
    """
    if tuple(labeled_skeleton.dims) != heatmap.dims:
        raise ValueError("skeleton grid does not match the heatmap grid")
    a = np.array(heatmap.data)
    pts = labeled_skeleton.points
    dims = np.asarray(heatmap.dims)
    oob = (pts < 0) | (pts >= dims)
    if oob.any():
        bad = pts[oob.any(axis=1)][0]
        raise ValueError(f"skeleton point {tuple(int(v) for v in bad)} lies outside the volume")
    keep = labeled_skeleton.label != 0
    kp = pts[keep]
    a[kp[:, 0], kp[:, 1], kp[:, 2]] = params.combine_skeleton_value
    return Volume.scalar(a, heatmap.spacing)


def _volume_paths(path):
    base = Path(path)
    if base.suffix in (".json", ".raw"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".raw")


def save_volume(vol: Volume, path) -> None:
    """Write ``<base>.json`` header and ``<base>.raw`` x-fastest payload."""
    header_path, raw_path = _volume_paths(path)
    is_mask = vol.kind == BINARY_MASK
    header = {
        "dims": [int(d) for d in vol.dims],
        "spacing": [float(s) for s in vol.spacing],
        "dtype": "u8" if is_mask else "f32",
        "order": "x-fastest",
        "endianness": "little",
    }
    header_path.write_text(json.dumps(header) + "\n")
    payload = vol.data.astype("<u1" if is_mask else "<f4").ravel(order="F")
    raw_path.write_bytes(payload.tobytes())


def load_volume(path) -> Volume:
    header_path, raw_path = _volume_paths(path)
    header = json.loads(header_path.read_text())
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"volume header {header_path} missing keys {missing}")
    if header["order"] != "x-fastest" or header["endianness"] != "little":
        raise ValueError("unsupported volume layout")
    dims = tuple(int(d) for d in header["dims"])
    n = dims[0] * dims[1] * dims[2]
    dtype = {"u8": "<u1", "f32": "<f4"}.get(header["dtype"])
    if dtype is None:
        raise ValueError(f"unsupported dtype {header['dtype']!r}")
    flat = np.frombuffer(raw_path.read_bytes(), dtype=dtype)
    if flat.size != n:
        raise ValueError(f"payload {raw_path} holds {flat.size} elements, expected {n}")
    data = flat.reshape(dims, order="F")
    if header["dtype"] == "u8":
        return Volume.mask(data, header["spacing"])
    return Volume.scalar(data, header["spacing"])
