"""Curve-skeleton machinery for binary masks.

Topology-preserving sequential thinning (26-connected foreground, 6-connected
background), 26-connectivity component labeling with deterministic numbering,
endpoint detection, and stratified point resampling. The thinning inner loops
are compiled with numba when available; the pure-Python fallback is identical
but slow.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .volume import BINARY_MASK, Volume

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a normal dependency
    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco

#: All 26 neighbor offsets in lexicographic order.
OFFSETS_26 = tuple(
    off for off in itertools.product((-1, 0, 1), repeat=3) if off != (0, 0, 0)
)

UNLABELED = -1
FALSE_POSITIVE = 0


@dataclass(frozen=True)
class SkeletonPointSet:
    """Unordered integer-voxel points with component ids and class labels.

    Points are kept unique and lexicographically sorted. ``component`` is 0
    until connected_components assigns ids 1..N; ``label`` is -1 while
    unlabeled, 0 for the false-positive class, >= 1 for vessel classes.
    A resampled subset keeps the component ids it inherited from the full
    skeleton even though the subset itself is no longer 26-path-connected.
    """

    points: np.ndarray
    component: np.ndarray
    label: np.ndarray
    dims: tuple
    spacing: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        comp = np.asarray(self.component, dtype=np.int64).reshape(-1)
        lab = np.asarray(self.label, dtype=np.int64).reshape(-1)
        if not (len(pts) == len(comp) == len(lab)):
            raise ValueError("points, component and label lengths differ")
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(pts):
            if (pts < 0).any() or (pts >= np.asarray(dims)).any():
                raise ValueError("skeleton points must lie inside the source grid")
            order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
            pts, comp, lab = pts[order], comp[order], lab[order]
            if len(pts) > 1 and (np.diff(pts, axis=0) == 0).all(axis=1).any():
                raise ValueError("skeleton points must be unique")
        for arr in (pts, comp, lab):
            arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "component", comp)
        object.__setattr__(self, "label", lab)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_points(cls, points, dims, spacing, component=None, label=None):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 3)
        n = len(pts)
        comp = np.zeros(n, dtype=np.int64) if component is None else component
        lab = np.full(n, UNLABELED, dtype=np.int64) if label is None else label
        return cls(pts, comp, lab, dims, spacing)

    def __len__(self):
        return len(self.points)

    @property
    def points_mm(self) -> np.ndarray:
        return self.points * np.asarray(self.spacing, dtype=np.float64)

    def with_labels(self, labels) -> "SkeletonPointSet":
        return SkeletonPointSet(self.points, self.component, labels, self.dims, self.spacing)

    def subset(self, keep) -> "SkeletonPointSet":
        return SkeletonPointSet(
            self.points[keep], self.component[keep], self.label[keep], self.dims, self.spacing
        )


# --------------------------------------------------------------------------
# thinning
# --------------------------------------------------------------------------
#
# Sequential border-point deletion over the six face directions. A point is
# deleted only if it is simple (deletion preserves both the 26-connected
# foreground and the 6-connected background topology) and not a curve
# endpoint (26-degree 1). Candidates are gathered per direction and visited
# in lexicographic order; simplicity is re-tested against the current state
# at visit time, which is what makes single-pass deletion topology-safe.


@njit(cache=True)
def _degree26(fg, x, y, z):
    deg = 0
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                deg += fg[x + dx, y + dy, z + dz]
    return deg


@njit(cache=True)
def _is_simple(fg, x, y, z):
    # Local 3x3x3 occupancy; cell index k = (dx+1)*9 + (dy+1)*3 + (dz+1),
    # center is 13. Simple iff exactly one 26-component of foreground
    # neighbors and exactly one 6-component of background in the
    # 18-neighborhood that touches a face of the center.
    nb = np.zeros(27, dtype=np.uint8)
    k = 0
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                nb[k] = fg[x + dx, y + dy, z + dz]
                k += 1

    stack = np.zeros(27, dtype=np.int64)
    visited = np.zeros(27, dtype=np.uint8)
    fg_comps = 0
    for s in range(27):
        if s == 13 or nb[s] == 0 or visited[s] == 1:
            continue
        fg_comps += 1
        if fg_comps > 1:
            return False
        visited[s] = 1
        top = 0
        stack[top] = s
        top += 1
        while top > 0:
            top -= 1
            c = stack[top]
            cx = c // 9 - 1
            cy = (c // 3) % 3 - 1
            cz = c % 3 - 1
            for m in range(27):
                if m == 13 or nb[m] == 0 or visited[m] == 1:
                    continue
                mx = m // 9 - 1
                my = (m // 3) % 3 - 1
                mz = m % 3 - 1
                if abs(mx - cx) <= 1 and abs(my - cy) <= 1 and abs(mz - cz) <= 1:
                    visited[m] = 1
                    stack[top] = m
                    top += 1
    if fg_comps != 1:
        return False

    # Background: 6-components inside the 18-neighborhood, seeded from the
    # six face cells so only components 6-adjacent to the center count.
    visited2 = np.zeros(27, dtype=np.uint8)
    bg_comps = 0
    for fi in range(6):
        s = (4, 10, 12, 14, 16, 22)[fi]
        if nb[s] == 1 or visited2[s] == 1:
            continue
        bg_comps += 1
        if bg_comps > 1:
            return False
        visited2[s] = 1
        top = 0
        stack[top] = s
        top += 1
        while top > 0:
            top -= 1
            c = stack[top]
            cx = c // 9 - 1
            cy = (c // 3) % 3 - 1
            cz = c % 3 - 1
            for m in range(27):
                if m == 13 or nb[m] == 1 or visited2[m] == 1:
                    continue
                mx = m // 9 - 1
                my = (m // 3) % 3 - 1
                mz = m % 3 - 1
                if abs(mx) + abs(my) + abs(mz) > 2:
                    continue
                if abs(mx - cx) + abs(my - cy) + abs(mz - cz) == 1:
                    visited2[m] = 1
                    stack[top] = m
                    top += 1
    return bg_comps == 1


@njit(cache=True)
def _thin_inplace(fg):
    nx, ny, nz = fg.shape
    n_fg = 0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                n_fg += fg[x, y, z]
    if n_fg == 0:
        return
    cand = np.zeros((n_fg, 3), dtype=np.int64)
    dxs = (-1, 1, 0, 0, 0, 0)
    dys = (0, 0, -1, 1, 0, 0)
    dzs = (0, 0, 0, 0, -1, 1)
    changed = True
    while changed:
        changed = False
        for d in range(6):
            dx = dxs[d]
            dy = dys[d]
            dz = dzs[d]
            cnt = 0
            for x in range(1, nx - 1):
                for y in range(1, ny - 1):
                    for z in range(1, nz - 1):
                        if fg[x, y, z] == 1 and fg[x + dx, y + dy, z + dz] == 0:
                            cand[cnt, 0] = x
                            cand[cnt, 1] = y
                            cand[cnt, 2] = z
                            cnt += 1
            for i in range(cnt):
                x = cand[i, 0]
                y = cand[i, 1]
                z = cand[i, 2]
                if _degree26(fg, x, y, z) == 1:
                    continue  # protected curve endpoint
                if _is_simple(fg, x, y, z):
                    fg[x, y, z] = 0
                    changed = True


def thin(mask: Volume) -> Volume:
    """Reduce a binary mask to a single-voxel-width curve skeleton.

    The result is a subset of the input, preserves the number of 26-connected
    foreground and 6-connected background components (with the outside of the
    grid counted as background), contains no remaining deletable simple
    points, and is idempotent. Deletion order is fixed, so the output is
    deterministic.
    """
    if mask.kind != BINARY_MASK:
        raise ValueError("thin expects a binary mask volume")
    fg = np.pad(np.ascontiguousarray(mask.data), 1)
    _thin_inplace(fg)
    return Volume.mask(fg[1:-1, 1:-1, 1:-1], mask.spacing)


# --------------------------------------------------------------------------
# components, endpoints, resampling
# --------------------------------------------------------------------------


def connected_components(obj) -> SkeletonPointSet:
    """Partition points into 26-connected components.

    Accepts a binary-mask Volume or a SkeletonPointSet. Components are
    numbered 1..N in order of their lexicographically smallest member voxel;
    the numbering is therefore invariant to input point ordering. Labels are
    carried through unchanged.
    """
    if isinstance(obj, Volume):
        if obj.kind != BINARY_MASK:
            raise ValueError("connected_components expects a binary mask volume")
        pts = np.argwhere(obj.data != 0).astype(np.int64)
        lab = np.full(len(pts), UNLABELED, dtype=np.int64)
        dims, spacing = obj.dims, obj.spacing
    else:
        pts, lab = obj.points, obj.label
        dims, spacing = obj.dims, obj.spacing

    n = len(pts)
    comp = np.zeros(n, dtype=np.int64)
    loc = {(int(p[0]), int(p[1]), int(p[2])): i for i, p in enumerate(pts)}
    next_id = 1
    for i in range(n):
        if comp[i]:
            continue
        comp[i] = next_id
        stack = [i]
        while stack:
            j = stack.pop()
            x, y, z = (int(v) for v in pts[j])
            for dx, dy, dz in OFFSETS_26:
                t = loc.get((x + dx, y + dy, z + dz))
                if t is not None and comp[t] == 0:
                    comp[t] = next_id
                    stack.append(t)
        next_id += 1
    return SkeletonPointSet(pts, comp, lab, dims, spacing)


def _point_degrees(points: np.ndarray) -> np.ndarray:
    pset = set((int(p[0]), int(p[1]), int(p[2])) for p in points)
    deg = np.zeros(len(points), dtype=np.int64)
    for i, p in enumerate(points):
        x, y, z = (int(v) for v in p)
        deg[i] = sum((x + dx, y + dy, z + dz) in pset for dx, dy, dz in OFFSETS_26)
    return deg


def endpoints(skel: SkeletonPointSet):
    """Points with 26-degree <= 1 within the set, with their component ids.

    An isolated point counts as its own (single) endpoint. Assumes a
    unit-width skeleton, i.e. the output of thin.
    """
    deg = _point_degrees(skel.points)
    out = []
    for i in np.flatnonzero(deg <= 1):
        p = skel.points[i]
        out.append(((int(p[0]), int(p[1]), int(p[2])), int(skel.component[i])))
    return out


def resample(skel: SkeletonPointSet, n: int, rng_seed: int = 0) -> SkeletonPointSet:
    """Subsample to exactly ``n`` points, proportionally per component.

    Identity when the set already has at most ``n`` points. Every component
    keeps at least one point (raises if there are more components than n).
    Allocation uses largest-remainder rounding; within a component the kept
    points are a uniform random choice driven by ``rng_seed``. Component ids
    and labels are inherited, not recomputed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    total = len(skel)
    if total <= n:
        return skel
    comp_ids, sizes = np.unique(skel.component, return_counts=True)
    if len(comp_ids) > n:
        raise ValueError(
            f"cannot keep {len(comp_ids)} components with only {n} points"
        )
    quota = n * sizes / total
    alloc = np.maximum(1, np.floor(quota).astype(np.int64))
    alloc = np.minimum(alloc, sizes)
    while alloc.sum() < n:
        room = alloc < sizes
        frac = np.where(room, quota - alloc, -np.inf)
        alloc[int(np.argmax(frac))] += 1
    while alloc.sum() > n:
        shrinkable = alloc > 1
        score = np.where(shrinkable, alloc, -1)
        alloc[int(np.argmax(score))] -= 1

    rng = np.random.default_rng(rng_seed)
    keep = []
    for cid, k in zip(comp_ids, alloc):
        idxs = np.flatnonzero(skel.component == cid)
        keep.append(np.sort(rng.choice(idxs, size=int(k), replace=False)))
    keep = np.concatenate(keep)
    return skel.subset(np.sort(keep))


# --------------------------------------------------------------------------
# file format: CSV with header x,y,z,component,label
# --------------------------------------------------------------------------


def save_points_csv(skel: SkeletonPointSet, path) -> None:
    lines = ["x,y,z,component,label"]
    for p, c, l in zip(skel.points, skel.component, skel.label):
        lines.append(f"{p[0]},{p[1]},{p[2]},{c},{l}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_points_csv(path, dims, spacing) -> SkeletonPointSet:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x,y,z,component,label":
            raise ValueError(f"unexpected skeleton CSV header {header!r}")
        rows = [tuple(int(v) for v in line.split(",")) for line in fh if line.strip()]
    if not rows:
        return SkeletonPointSet.from_points(np.zeros((0, 3)), dims, spacing)
    arr = np.asarray(rows, dtype=np.int64)
    return SkeletonPointSet(arr[:, :3], arr[:, 3], arr[:, 4], dims, spacing)
