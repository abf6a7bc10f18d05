"""Geometry-aware grouping of skeleton points.

The grouping distance scales the Euclidean distance between two points by
lam when they belong to the same skeleton component and by (1 - lam)
otherwise, with 0 < lam < 0.5. Neighborhoods built under it stretch along
skeleton components instead of jumping across nearby parallel structures.
On top of it sit k-NN graph construction, seeded label propagation, and
false-positive removal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .skeleton import FALSE_POSITIVE, UNLABELED, SkeletonPointSet, connected_components

METRIC_L2 = "l2"
METRIC_GAG = "gag"

_MAX_ROUNDS = 100


def _check_lambda(lam: float):
    if not 0.0 < lam < 0.5:
        raise ValueError("grouping weight must lie strictly inside (0, 0.5)")


@dataclass(frozen=True)
class GroupingConfig:
    """lam: component weight; k: neighbor count; seeds: (point index, class id)."""

    lam: float = 0.3
    k: int = 8
    seeds: tuple = ()

    def __post_init__(self):
        _check_lambda(self.lam)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "seeds", tuple((int(i), int(c)) for i, c in self.seeds))


def gag_distance(x_i, x_j, same_component: bool, lam: float) -> float:
    """Component-weighted distance: lam * ||xi - xj|| within a component,
    (1 - lam) * ||xi - xj|| across components. Symmetric, zero iff xi == xj."""
    _check_lambda(lam)
    d = float(np.linalg.norm(np.asarray(x_i, dtype=np.float64) - np.asarray(x_j, dtype=np.float64)))
    return lam * d if same_component else (1.0 - lam) * d


def _pair_distances(skel: SkeletonPointSet, lam=None) -> np.ndarray:
    pts = skel.points_mm
    d = cdist(pts, pts)
    if lam is not None:
        same = skel.component[:, None] == skel.component[None, :]
        d = np.where(same, lam * d, (1.0 - lam) * d)
    np.fill_diagonal(d, np.inf)
    return d


def knn_graph(skel: SkeletonPointSet, cfg: GroupingConfig, metric: str = METRIC_GAG) -> np.ndarray:
    """(N, k) neighbor indices per point under the chosen metric.

    Rows are sorted by distance; ties resolve to the lexicographically
    smaller point (points are stored in lexicographic order, so a stable
    sort on the index axis does this for free).
    """
    metric = metric.lower()
    if metric not in (METRIC_L2, METRIC_GAG):
        raise ValueError(f"unknown metric {metric!r}")
    n = len(skel)
    if cfg.k >= n:
        raise ValueError(f"k={cfg.k} requires more than k points, got {n}")
    d = _pair_distances(skel, cfg.lam if metric == METRIC_GAG else None)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, : cfg.k]


def neighborhood_purity(skel: SkeletonPointSet, nbrs: np.ndarray) -> float:
    """Fraction of neighbor entries that share the query point's component."""
    same = skel.component[nbrs] == skel.component[:, None]
    return float(same.mean())


def seeds_from_points(skel: SkeletonPointSet, seed_points, seed_labels):
    """Snap seed coordinates to the nearest skeleton point (mm metric).

    Returns (index, class) pairs suitable for GroupingConfig.seeds. Ties
    resolve to the lexicographically smallest point.
    """
    pts = np.asarray(seed_points, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(seed_labels, dtype=np.int64).reshape(-1)
    if len(pts) != len(labels):
        raise ValueError("seed points and labels lengths differ")
    if len(skel) == 0:
        raise ValueError("cannot snap seeds to an empty skeleton")
    sp = np.asarray(skel.spacing)
    d = cdist(pts * sp, skel.points_mm)
    idx = d.argmin(axis=1)
    return tuple((int(i), int(c)) for i, c in zip(idx, labels))


def propagate_labels(skel: SkeletonPointSet, cfg: GroupingConfig) -> SkeletonPointSet:
    """Seeded label propagation over the geometry-aware k-NN graph.

    Synchronous voting rounds (seeds pinned) until fixpoint or 100 rounds;
    each point takes the class with the largest inverse-distance-weighted
    neighbor vote, so nearby same-component neighbors dominate distant
    cross-component ones yet labels can still flow across small gaps when a
    stretch has no labeled points of its own. Components the votes never
    reach take the label of the nearest labeled point under the grouping
    distance; finally each component collapses to the majority label of its
    labeled points, so the output is constant within every component. All
    ties resolve to the smallest class id.
    """
    if not cfg.seeds:
        raise ValueError("unlabeled problem: at least one seed is required")
    n = len(skel)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    for i, c in cfg.seeds:
        if not 0 <= i < n:
            raise ValueError(f"seed index {i} out of range")
        if c < 0:
            raise ValueError("seed class ids must be >= 0")
        if labels[i] != UNLABELED and labels[i] != c:
            raise ValueError(f"conflicting seeds at point index {i}")
        labels[i] = c
    seed_idx = np.array([i for i, _ in cfg.seeds], dtype=np.int64)
    seed_lab = np.array([c for _, c in cfg.seeds], dtype=np.int64)
    classes = np.unique(seed_lab)

    if n == 1:
        labels[:] = seed_lab[0]
        return skel.with_labels(labels)

    k = min(cfg.k, n - 1)
    d_gag = _pair_distances(skel, cfg.lam)
    nbrs = np.argsort(d_gag, axis=1, kind="stable")[:, :k]
    weight = 1.0 / (1e-9 + np.take_along_axis(d_gag, nbrs, axis=1))

    for _ in range(_MAX_ROUNDS):
        nb_lab = labels[nbrs]  # (n, k), reads the previous round only
        scores = np.stack([((nb_lab == c) * weight).sum(axis=1) for c in classes], axis=1)
        any_vote = (nb_lab != UNLABELED).any(axis=1)
        voted = classes[np.argmax(scores, axis=1)]
        new = np.where(any_vote, voted, labels)
        new[seed_idx] = seed_lab
        if np.array_equal(new, labels):
            break
        labels = new

    out = np.full(n, UNLABELED, dtype=np.int64)
    unreached_comps = []
    for cid in np.unique(skel.component):
        members = skel.component == cid
        votes = labels[members]
        votes = votes[votes != UNLABELED]
        if len(votes):
            out[members] = int(np.argmax(np.bincount(votes)))
        else:
            unreached_comps.append(cid)
    # Components without a single voted point take the label of the nearest
    # labeled point (necessarily cross-component) as of the vote fixpoint.
    if unreached_comps:
        labeled = np.flatnonzero(labels != UNLABELED)
        for cid in unreached_comps:
            members = skel.component == cid
            d = (1.0 - cfg.lam) * cdist(skel.points_mm[members], skel.points_mm[labeled])
            j = int(np.unravel_index(np.argmin(d), d.shape)[1])
            out[members] = labels[labeled][j]
    return skel.with_labels(out)


def remove_false_positives(skel: SkeletonPointSet) -> SkeletonPointSet:
    """Drop points of the false-positive class (0) and renumber components."""
    if (skel.label == UNLABELED).any():
        raise ValueError("remove_false_positives requires a fully labeled skeleton")
    kept = skel.subset(skel.label != FALSE_POSITIVE)
    return connected_components(kept)


def labeling_accuracy(predicted: SkeletonPointSet, reference) -> float:
    """Fraction of points whose predicted label matches the reference.

    ``reference`` is either a SkeletonPointSet over the same points or a
    plain label array of the same length.
    """
    if isinstance(reference, SkeletonPointSet):
        if len(predicted) != len(reference) or not np.array_equal(predicted.points, reference.points):
            raise ValueError("labelings cover different point sets")
        ref = reference.label
    else:
        ref = np.asarray(reference, dtype=np.int64).reshape(-1)
        if len(ref) != len(predicted):
            raise ValueError("label array length does not match the point set")
    if len(predicted) == 0:
        raise ValueError("empty point set")
    return float((predicted.label == ref).mean())


def apply_component_labels(skel: SkeletonPointSet, labeled: SkeletonPointSet) -> SkeletonPointSet:
    """Transfer per-component labels from a labeled (sub)set to ``skel``.

    Used to carry labels decided on a resampled subset back to the full
    skeleton; every component of ``skel`` must appear in ``labeled``.
    """
    mapping = {}
    for cid, lab in zip(labeled.component, labeled.label):
        mapping.setdefault(int(cid), int(lab))
    missing = set(int(c) for c in np.unique(skel.component)) - set(mapping)
    if missing:
        raise ValueError(f"no label available for components {sorted(missing)}")
    labels = np.array([mapping[int(c)] for c in skel.component], dtype=np.int64)
    return skel.with_labels(labels)


# --------------------------------------------------------------------------
# seed file: CSV with header x,y,z,label
# --------------------------------------------------------------------------


def save_seeds_csv(points, labels, path) -> None:
    lines = ["x,y,z,label"]
    for p, l in zip(np.asarray(points, dtype=np.int64), labels):
        lines.append(f"{p[0]},{p[1]},{p[2]},{int(l)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_seeds_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x,y,z,label":
            raise ValueError(f"unexpected seed CSV header {header!r}")
        rows = [tuple(int(v) for v in line.split(",")) for line in fh if line.strip()]
    if not rows:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.asarray(rows, dtype=np.int64)
    return arr[:, :3], arr[:, 3]
