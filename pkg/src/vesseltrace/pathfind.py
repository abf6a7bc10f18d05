"""Minimal-cost paths over affinity volumes and label-guided reconnection.

Edges run between 26-neighbor voxels; entering voxel v costs
step_mm / (EPS_AFFINITY + affinity(v)) where step_mm is the physical distance
between the voxel centers. Same-label skeleton components are merged by
processing endpoint pairs in ascending Euclidean-gap order, skipping pairs
whose components an earlier bridge already joined.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .skeleton import OFFSETS_26, SkeletonPointSet, connected_components, endpoints
from .volume import EPS_AFFINITY, Volume

_OFFSETS = np.asarray(OFFSETS_26, dtype=np.int64)


def step_lengths_mm(spacing) -> np.ndarray:
    """Physical length of each 26-neighbor step, in OFFSETS_26 order."""
    sp = np.asarray(spacing, dtype=np.float64)
    return np.sqrt(((_OFFSETS * sp) ** 2).sum(axis=1))


@dataclass(frozen=True)
class CenterlinePath:
    """Ordered voxel polyline with the spans added by path search marked."""

    label: int
    points: np.ndarray
    bridged_spans: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        if len(pts) > 1:
            steps = np.abs(np.diff(pts, axis=0))
            if (steps.max(axis=1) > 1).any():
                raise ValueError("consecutive path points must be 26-adjacent")
            if (steps.sum(axis=1) == 0).any():
                raise ValueError("path may not repeat consecutive points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(
            self, "bridged_spans", tuple((int(a), int(b)) for a, b in self.bridged_spans)
        )


@dataclass(frozen=True)
class PairQueueEntry:
    endpoint_a: tuple
    endpoint_b: tuple
    component_a: int
    component_b: int
    label: int
    euclidean_gap: float


class DisjointSet:
    """Union-find over arbitrary hashable ids with path compression."""

    def __init__(self):
        self._parent = {}

    def find(self, x):
        parent = self._parent
        root = parent.setdefault(x, x)
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self._parent[rb] = ra
        return ra


def _search(data: np.ndarray, spacing, src, dst, forbidden=None):
    """Dijkstra over the voxel grid; returns ((L, 3) path, total cost).

    The heap orders by (cost, linear index), and relaxation only replaces a
    strictly worse distance, so among equal-cost shortest paths the one whose
    predecessors pop first (lowest linear index, i.e. lexicographically
    smallest voxel) wins deterministically.
    """
    nx, ny, nz = data.shape
    sx, sy, sz = (int(v) for v in src)
    tx, ty, tz = (int(v) for v in dst)
    steps = step_lengths_mm(spacing)
    offs = _OFFSETS

    def lin(x, y, z):
        return (x * ny + y) * nz + z

    n = nx * ny * nz
    dist = np.full(n, np.inf)
    prev = np.full(n, -1, dtype=np.int64)
    s = lin(sx, sy, sz)
    t = lin(tx, ty, tz)
    dist[s] = 0.0
    heap = [(0.0, s)]
    flat = data.ravel()
    forb = forbidden.ravel() if forbidden is not None else None
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == t:
            break
        uz = u % nz
        uy = (u // nz) % ny
        ux = u // (ny * nz)
        for i in range(26):
            vx = ux + offs[i, 0]
            vy = uy + offs[i, 1]
            vz = uz + offs[i, 2]
            if not (0 <= vx < nx and 0 <= vy < ny and 0 <= vz < nz):
                continue
            v = (vx * ny + vy) * nz + vz
            if forb is not None and forb[v]:
                continue
            nd = d + steps[i] / (EPS_AFFINITY + flat[v])
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if not np.isfinite(dist[t]):
        raise ValueError(f"no route from {tuple(src)} to {tuple(dst)}")
    path = []
    u = t
    while u != -1:
        path.append((u // (ny * nz), (u // nz) % ny, u % nz))
        if u == s:
            break
        u = prev[u]
    path.reverse()
    return np.asarray(path, dtype=np.int64), float(dist[t])


def dijkstra_path(cost_map_affinity: Volume, src, dst, forbidden=None):
    """Minimum-total-cost 26-connected voxel path between two voxels.

    ``forbidden`` is an optional boolean mask of voxels the path may not
    enter; an unreachable destination (only possible with a forbidden mask,
    since affinities keep every edge finite) raises. src == dst yields a
    single-point path of cost 0.
    """
    dims = cost_map_affinity.dims
    for name, p in (("src", src), ("dst", dst)):
        p = tuple(int(v) for v in p)
        if any(not 0 <= p[a] < dims[a] for a in range(3)):
            raise ValueError(f"{name} voxel {p} lies outside the volume")
    if (cost_map_affinity.data < 0).any():
        raise ValueError("affinity values must be nonnegative")
    if forbidden is not None:
        forbidden = np.asarray(forbidden, dtype=bool)
        if forbidden.shape != dims:
            raise ValueError("forbidden mask shape does not match the volume")
    return _search(cost_map_affinity.data, cost_map_affinity.spacing, src, dst, forbidden)


def build_pair_queue(skel: SkeletonPointSet):
    """All cross-component endpoint pairs sharing a vessel label (>= 1),
    sorted ascending by Euclidean gap in mm, ties by endpoint order."""
    sp = np.asarray(skel.spacing)
    label_of = {
        (int(p[0]), int(p[1]), int(p[2])): int(l) for p, l in zip(skel.points, skel.label)
    }
    tips = endpoints(skel)
    by_label = {}
    for p, comp in tips:
        lab = label_of[p]
        if lab >= 1:
            by_label.setdefault(lab, []).append((p, comp))
    entries = []
    for lab in sorted(by_label):
        items = by_label[lab]
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                (pa, ca), (pb, cb) = items[i], items[j]
                if ca == cb:
                    continue
                if pb < pa:
                    pa, pb, ca, cb = pb, pa, cb, ca
                gap = float(np.linalg.norm((np.asarray(pa) - np.asarray(pb)) * sp))
                entries.append(
                    PairQueueEntry(pa, pb, ca, cb, lab, gap)
                )
    entries.sort(key=lambda e: (e.euclidean_gap, e.endpoint_a, e.endpoint_b))
    return entries


def _adjacency(points):
    pset = {(int(p[0]), int(p[1]), int(p[2])) for p in points}
    adj = {}
    for p in pset:
        x, y, z = p
        nbrs = [
            (x + dx, y + dy, z + dz)
            for dx, dy, dz in OFFSETS_26
            if (x + dx, y + dy, z + dz) in pset
        ]
        adj[p] = sorted(nbrs)
    return adj


def _trace_polylines(points):
    """Decompose a 26-connected point set into simple polylines.

    Walks start at nodes (degree != 2); each polyline runs node to node
    through degree-2 chains, so branch voxels split the structure into one
    polyline per branch. A pure cycle is walked once from its smallest point.
    """
    adj = _adjacency(points)
    nodes = sorted(p for p, nb in adj.items() if len(nb) != 2)
    seen_edges = set()
    polylines = []

    def walk(start, first):
        path = [start, first]
        seen_edges.add(frozenset((start, first)))
        prev, cur = start, first
        while len(adj[cur]) == 2:
            nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
            edge = frozenset((cur, nxt))
            if edge in seen_edges:
                break
            seen_edges.add(edge)
            path.append(nxt)
            prev, cur = cur, nxt
        return path

    for node in nodes:
        if not adj[node]:
            polylines.append([node])
            continue
        for nb in adj[node]:
            if frozenset((node, nb)) in seen_edges:
                continue
            polylines.append(walk(node, nb))
    if not nodes and adj:  # pure cycle
        start = min(adj)
        polylines.append(walk(start, adj[start][0]))
    return polylines


def _bridged_spans(flags):
    spans = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append((start, i - 1))
            start = None
    if start is not None:
        spans.append((start, len(flags) - 1))
    return tuple(spans)


def trace_paths(skel: SkeletonPointSet, bridged=None):
    """Emit one CenterlinePath per simple polyline of the skeleton graph.

    ``bridged`` is an optional point -> bool map marking voxels added by
    path search. Paths come out grouped by component (ascending id), then in
    walk order; labels are inherited from the component's points.
    """
    comps = connected_components(skel)
    label_of = {
        (int(p[0]), int(p[1]), int(p[2])): int(l) for p, l in zip(comps.points, comps.label)
    }
    paths = []
    for cid in np.unique(comps.component):
        pts = comps.points[comps.component == cid]
        for poly in _trace_polylines(pts):
            flags = [bool(bridged.get(p, False)) if bridged else False for p in poly]
            paths.append(
                CenterlinePath(
                    label=label_of[poly[0]],
                    points=np.asarray(poly, dtype=np.int64),
                    bridged_spans=_bridged_spans(flags),
                )
            )
    return paths


def connect_segments(skel: SkeletonPointSet, cost_map: Volume, bridge_affinity=None):
    """Bridge disjoint same-label components, then trace the centerlines.

    Endpoint pairs are processed in ascending-gap order; a pair whose
    components were already joined by an earlier bridge is skipped
    (union-find), so at most (components - 1) bridges are built per label.
    Bridge voxels are stamped into the working skeleton and the working
    affinity copy (at ``bridge_affinity``, defaulting to the map's maximum),
    so later searches can route along earlier bridges. Expects false
    positives to be removed already.
    """
    if (skel.label == 0).any():
        raise ValueError("false positives must be removed before reconnection")
    if tuple(skel.dims) != cost_map.dims:
        raise ValueError("skeleton grid does not match the cost map grid")
    affinity = np.array(cost_map.data)
    bridge_value = float(bridge_affinity) if bridge_affinity is not None else max(
        float(affinity.max()), 1.0
    )

    info = {
        (int(p[0]), int(p[1]), int(p[2])): (int(c), int(l))
        for p, c, l in zip(skel.points, skel.component, skel.label)
    }
    bridged = {p: False for p in info}
    uf = DisjointSet()
    for entry in build_pair_queue(skel):
        if uf.find(entry.component_a) == uf.find(entry.component_b):
            continue
        path, _ = _search(affinity, skel.spacing, entry.endpoint_a, entry.endpoint_b)
        root = uf.union(entry.component_a, entry.component_b)
        for p in map(tuple, path.tolist()):
            if p not in info:
                info[p] = (root, entry.label)
                bridged[p] = True
                affinity[p] = max(affinity[p], bridge_value)

    pts = np.asarray(sorted(info), dtype=np.int64)
    labels = np.asarray([info[tuple(p)][1] for p in pts], dtype=np.int64)
    merged = SkeletonPointSet.from_points(
        pts, skel.dims, skel.spacing, label=labels
    )
    return trace_paths(merged, bridged=bridged)


# --------------------------------------------------------------------------
# file format: JSON list of {label, points, bridged_spans}
# --------------------------------------------------------------------------


def save_paths(paths, path) -> None:
    payload = [
        {
            "label": int(p.label),
            "points": [[int(v) for v in q] for q in p.points],
            "bridged_spans": [[int(a), int(b)] for a, b in p.bridged_spans],
        }
        for p in paths
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_paths(path):
    with open(path) as fh:
        payload = json.load(fh)
    return [
        CenterlinePath(
            int(e["label"]),
            np.asarray(e["points"], dtype=np.int64).reshape(-1, 3),
            tuple((int(a), int(b)) for a, b in e.get("bridged_spans", [])),
        )
        for e in payload
    ]
