"""Centerline overlap scoring.

Reference and extracted polylines are resampled to a uniform arclength pitch
(0.5 mm by default), then points are matched within a threshold that is
either a fixed distance or the reference point's local radius. From the
matched/unmatched counts come three scores: OV (Dice-like total overlap),
OF (fraction of the reference, root to tip, covered before the first miss)
and OT (OV restricted to the clinically relevant reference subset, local
radius >= 0.75 mm by default). Counts are unweighted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_PITCH_MM = 0.5
DEFAULT_CLINICAL_RADIUS_MM = 0.75

RULE_FIXED = "fixed_mm"
RULE_LOCAL_RADIUS = "local_radius"


def resample_polyline(points_mm, pitch_mm: float = DEFAULT_PITCH_MM, values=None):
    """Resample a polyline at uniform arclength pitch.

    n = max(1, round(length / pitch)) samples, centered along the curve
    (the first sits at (length - (n-1) * pitch) / 2), so a 20 mm line at
    0.5 mm pitch gives 40 points and a reversed polyline resamples to the
    same point set. Optional per-vertex values (e.g. radii) are
    interpolated linearly along arclength.
    """
    pts = np.asarray(points_mm, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        empty = np.zeros((0, 3))
        return (empty, np.zeros(0)) if values is not None else empty
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arcs = np.concatenate([[0.0], np.cumsum(seg)])
    total = arcs[-1]
    n = max(1, int(round(total / pitch_mm)))
    s = 0.5 * (total - (n - 1) * pitch_mm) + np.arange(n, dtype=np.float64) * pitch_mm
    out = np.empty((n, 3))
    for a in range(3):
        out[:, a] = np.interp(s, arcs, pts[:, a])
    if values is None:
        return out
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(vals) != len(pts):
        raise ValueError("values length does not match the polyline")
    return out, np.interp(s, arcs, vals)


@dataclass(frozen=True)
class Correspondence:
    """Point-level matching between a resampled reference and extraction."""

    ref_points: np.ndarray
    ref_radii: np.ndarray  # may be empty when the reference carries no radii
    ext_points: np.ndarray
    match_matrix: np.ndarray  # (R, E) bool
    ref_matched: np.ndarray
    ext_matched: np.ndarray
    threshold_rule: str
    threshold_mm: float


def correspond(
    reference_mm,
    extracted_mm,
    threshold_rule: str = RULE_FIXED,
    threshold_mm: float = 1.0,
    reference_radii_mm=None,
    pitch_mm: float = DEFAULT_PITCH_MM,
) -> Correspondence:
    """Match resampled reference and extracted points within the threshold.

    ``extracted_mm`` is one polyline or a list of polylines; each is
    resampled separately and the samples pooled. A reference point is
    matched iff some extracted point lies within its threshold; an extracted
    point is matched iff it lies within the threshold of some reference
    point. Raises on an empty reference; an empty extraction simply leaves
    every reference point unmatched.
    """
    if threshold_rule not in (RULE_FIXED, RULE_LOCAL_RADIUS):
        raise ValueError(f"unknown threshold rule {threshold_rule!r}")
    ref_in = np.asarray(reference_mm, dtype=np.float64).reshape(-1, 3)
    if len(ref_in) == 0:
        raise ValueError("reference polyline is empty")
    if reference_radii_mm is not None:
        ref, radii = resample_polyline(ref_in, pitch_mm, reference_radii_mm)
    else:
        if threshold_rule == RULE_LOCAL_RADIUS:
            raise ValueError("local_radius matching needs reference radii")
        ref = resample_polyline(ref_in, pitch_mm)
        radii = np.zeros(0)

    if isinstance(extracted_mm, np.ndarray) and extracted_mm.ndim == 2:
        ext_list = [extracted_mm]
    else:
        ext_list = list(extracted_mm)
    pieces = [resample_polyline(p, pitch_mm) for p in ext_list if len(np.atleast_2d(p))]
    pieces = [p for p in pieces if len(p)]
    ext = np.vstack(pieces) if pieces else np.zeros((0, 3))

    if len(ext) == 0:
        match = np.zeros((len(ref), 0), dtype=bool)
    else:
        d = cdist(ref, ext)
        thr = radii if threshold_rule == RULE_LOCAL_RADIUS else np.full(len(ref), threshold_mm)
        match = d <= thr[:, None]
    return Correspondence(
        ref_points=ref,
        ref_radii=radii,
        ext_points=ext,
        match_matrix=match,
        ref_matched=match.any(axis=1),
        ext_matched=match.any(axis=0),
        threshold_rule=threshold_rule,
        threshold_mm=float(threshold_mm),
    )


def overlap_ov(c: Correspondence) -> float:
    """Dice-like total overlap: (TPM + TPR) / (TPM + TPR + FN + FP)."""
    tpr = int(c.ref_matched.sum())
    tpm = int(c.ext_matched.sum())
    fn = len(c.ref_matched) - tpr
    fp = len(c.ext_matched) - tpm
    return (tpm + tpr) / (tpm + tpr + fn + fp)


def overlap_of(c: Correspondence) -> float:
    """Fraction of the reference (root to tip) covered before the first miss."""
    unmatched = np.flatnonzero(~c.ref_matched)
    if len(unmatched) == 0:
        return 1.0
    return int(unmatched[0]) / len(c.ref_matched)


def overlap_ot(c: Correspondence, clinical_radius_mm: float = DEFAULT_CLINICAL_RADIUS_MM):
    """OV over the clinically relevant reference subset (radius >= threshold).

    Extracted points count as true positives only when they match the
    subset; points matching solely sub-clinical reference are left out of
    the score entirely (they are neither hits nor errors here), so an
    extraction identical to a tapered reference still scores 1.0. Returns
    None (not applicable) when no reference point reaches the clinical
    radius.
    """
    if len(c.ref_radii) != len(c.ref_points):
        raise ValueError("correspondence carries no reference radii")
    subset = c.ref_radii >= clinical_radius_mm
    if not subset.any():
        return None
    sub = c.match_matrix[subset]
    tpr = int(sub.any(axis=1).sum())
    fn = int(subset.sum()) - tpr
    tpm = int(sub.any(axis=0).sum())
    fp = int((~c.ext_matched).sum())  # extracted points matching nothing at all
    return (tpm + tpr) / (tpm + tpr + fn + fp)


@dataclass(frozen=True)
class VesselScore:
    label: int
    name: str
    ov: float
    of: float
    ot: object  # float or None when not applicable


@dataclass(frozen=True)
class OverlapReport:
    per_vessel: tuple
    match_threshold_mm: float
    clinical_radius_mm: float
    threshold_rule: str
    pitch_mm: float

    NOTE = "unweighted point counts"

    @property
    def aggregate(self) -> dict:
        if not self.per_vessel:
            return {"ov": None, "of": None, "ot": None}
        ots = [v.ot for v in self.per_vessel if v.ot is not None]
        return {
            "ov": float(np.mean([v.ov for v in self.per_vessel])),
            "of": float(np.mean([v.of for v in self.per_vessel])),
            "ot": float(np.mean(ots)) if ots else None,
        }

    def to_json_dict(self) -> dict:
        return {
            "note": self.NOTE,
            "threshold_rule": self.threshold_rule,
            "match_threshold_mm": self.match_threshold_mm,
            "clinical_radius_mm": self.clinical_radius_mm,
            "pitch_mm": self.pitch_mm,
            "per_vessel": [
                {"label": v.label, "name": v.name, "ov": v.ov, "of": v.of, "ot": v.ot}
                for v in self.per_vessel
            ],
            "aggregate": self.aggregate,
        }

    def to_table(self) -> str:
        def pct(x):
            return "   n/a" if x is None else f"{100.0 * x:6.1f}"

        lines = [
            f"centerline overlap ({self.NOTE}; rule={self.threshold_rule}, "
            f"threshold={self.match_threshold_mm:.2f} mm, "
            f"clinical radius={self.clinical_radius_mm:.2f} mm, "
            f"pitch={self.pitch_mm:.2f} mm)",
            f"{'vessel':<16}{'OV(%)':>8}{'OF(%)':>8}{'OT(%)':>8}",
        ]
        for v in self.per_vessel:
            lines.append(f"{v.name:<16}{pct(v.ov):>8}{pct(v.of):>8}{pct(v.ot):>8}")
        agg = self.aggregate
        lines.append(f"{'mean':<16}{pct(agg['ov']):>8}{pct(agg['of']):>8}{pct(agg['ot']):>8}")
        return "\n".join(lines) + "\n"


def evaluate_centerlines(
    references,
    extracted,
    threshold_rule: str = RULE_FIXED,
    threshold_mm: float = 1.0,
    clinical_radius_mm: float = DEFAULT_CLINICAL_RADIUS_MM,
    pitch_mm: float = DEFAULT_PITCH_MM,
    names=None,
) -> OverlapReport:
    """Score extracted polylines against per-label reference vessels.

    ``references``: list of (label, points_mm, radii_mm); ``extracted``:
    list of (label, points_mm). Extracted paths are pooled per reference
    label; unlabeled paths (label < 0) fall back to the reference that gives
    them the best individual OV.
    """
    names = names or {}
    by_label = {}
    unlabeled = []
    for lab, pts in extracted:
        (unlabeled if lab < 0 else by_label.setdefault(int(lab), [])).append(
            np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        )
    for pts in unlabeled:
        best_lab, best_ov = None, -1.0
        for lab, ref_pts, radii in references:
            c = correspond(ref_pts, [pts], threshold_rule, threshold_mm, radii, pitch_mm)
            ov = overlap_ov(c)
            if ov > best_ov:
                best_lab, best_ov = int(lab), ov
        if best_lab is not None:
            by_label.setdefault(best_lab, []).append(pts)

    scores = []
    for lab, ref_pts, radii in references:
        c = correspond(
            ref_pts, by_label.get(int(lab), []), threshold_rule, threshold_mm, radii, pitch_mm
        )
        scores.append(
            VesselScore(
                label=int(lab),
                name=names.get(int(lab), f"label-{int(lab)}"),
                ov=overlap_ov(c),
                of=overlap_of(c),
                ot=overlap_ot(c, clinical_radius_mm),
            )
        )
    return OverlapReport(
        per_vessel=tuple(scores),
        match_threshold_mm=float(threshold_mm),
        clinical_radius_mm=float(clinical_radius_mm),
        threshold_rule=threshold_rule,
        pitch_mm=float(pitch_mm),
    )


def save_report(report: OverlapReport, json_path, table_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
    if table_path is not None:
        with open(table_path, "w") as fh:
            fh.write(report.to_table())
