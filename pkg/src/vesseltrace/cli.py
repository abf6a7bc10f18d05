"""Pipeline orchestration and command-line interface.

Subcommands mirror the pipeline stages: ``phantom`` (generate ground truth,
optionally corrupted), ``skeletonize`` (thin + component labeling),
``label`` (seeded propagation), ``extract`` (skeletonize, label, remove
false positives, bridge gaps, trace centerlines), ``evaluate`` (overlap
metrics against ground truth) and ``run-all``. Every command writes a
manifest recording the config, tool version and input/output digests, and
all randomness flows through the single rng-seed knob, so identical
invocations reproduce byte-identical outputs.

Exit codes: 0 success, 1 pipeline error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .grouping import (
    GroupingConfig,
    apply_component_labels,
    load_seeds_csv,
    propagate_labels,
    remove_false_positives,
    seeds_from_points,
)
from .metrics import RULE_FIXED, evaluate_centerlines, save_report
from .pathfind import connect_segments, load_paths, save_paths, trace_paths
from .phantom import (
    CorruptionSpec,
    corrupt,
    generate_tree,
    load_centerlines,
    load_corruption_report,
    save_centerlines,
    save_corruption_report,
)
from .skeleton import connected_components, load_points_csv, resample, save_points_csv, thin
from .volume import (
    HeatmapParams,
    Volume,
    build_cost_map,
    build_heatmap,
    euclidean_distance_to_centerline,
    load_volume,
    save_volume,
)


@dataclass(frozen=True)
class PipelineConfig:
    gag_lambda: float = 0.3
    knn_k: int = 8
    resample_n: int = 3000
    low_value: float = 0.05
    combine_skeleton_value: float = 2.0
    match_threshold_mm: float = 1.0
    clinical_radius_mm: float = 0.75
    rng_seed: int = 0


def _add_config_flags(parser: argparse.ArgumentParser):
    defaults = PipelineConfig()
    parser.add_argument("--gag-lambda", type=float, default=defaults.gag_lambda)
    parser.add_argument("--knn-k", type=int, default=defaults.knn_k)
    parser.add_argument("--resample-n", type=int, default=defaults.resample_n)
    parser.add_argument("--low-value", type=float, default=defaults.low_value)
    parser.add_argument(
        "--combine-skeleton-value", type=float, default=defaults.combine_skeleton_value
    )
    parser.add_argument(
        "--match-threshold-mm", type=float, default=defaults.match_threshold_mm
    )
    parser.add_argument(
        "--clinical-radius-mm", type=float, default=defaults.clinical_radius_mm
    )
    parser.add_argument("--rng-seed", type=int, default=defaults.rng_seed)


def _config_from_args(args) -> PipelineConfig:
    return PipelineConfig(
        gag_lambda=args.gag_lambda,
        knn_k=args.knn_k,
        resample_n=args.resample_n,
        low_value=args.low_value,
        combine_skeleton_value=args.combine_skeleton_value,
        match_threshold_mm=args.match_threshold_mm,
        clinical_radius_mm=args.clinical_radius_mm,
        rng_seed=args.rng_seed,
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: PipelineConfig, inputs, outputs):
    manifest = {
        "tool": "vesseltrace",
        "version": __version__,
        "command": command,
        "config": asdict(config),
        "inputs": {name: _sha256(Path(p)) for name, p in sorted(inputs.items())},
        "outputs": {name: _sha256(Path(p)) for name, p in sorted(outputs.items())},
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# stage drivers (also the library entry points used by tests and scripts)
# --------------------------------------------------------------------------


def run_phantom(
    out_dir,
    dims,
    spacing,
    branch_count,
    tortuosity,
    radius_range_mm,
    config: PipelineConfig,
    corruption: CorruptionSpec | None = None,
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ph = generate_tree(
        dims, spacing, branch_count, tortuosity, radius_range_mm, config.rng_seed
    )
    save_volume(ph.mask, out_dir / "mask")
    save_volume(ph.radius_field, out_dir / "radius")
    save_centerlines(ph.centerlines, out_dir / "centerlines.json")
    outputs = {
        "mask.json": out_dir / "mask.json",
        "mask.raw": out_dir / "mask.raw",
        "radius.json": out_dir / "radius.json",
        "radius.raw": out_dir / "radius.raw",
        "centerlines.json": out_dir / "centerlines.json",
    }
    info = {"out_dir": str(out_dir), "branches": len(ph.centerlines)}
    if corruption is not None:
        result = corrupt(ph, corruption)
        save_volume(result.mask, out_dir / "corrupted_mask")
        save_corruption_report(result, out_dir / "corruption.json")
        outputs.update(
            {
                "corrupted_mask.json": out_dir / "corrupted_mask.json",
                "corrupted_mask.raw": out_dir / "corrupted_mask.raw",
                "corruption.json": out_dir / "corruption.json",
            }
        )
        info["gaps"] = len(result.gaps)
        info["blobs"] = len(result.blobs)
    _write_manifest(out_dir, "phantom", config, {}, outputs)
    return info


def _ground_truth_seeds(phantom_dir: Path):
    """One seed per branch at its root, plus one class-0 seed per FP blob."""
    centerlines = load_centerlines(phantom_dir / "centerlines.json")
    points = [c.points[0] for c in centerlines]
    labels = [c.label for c in centerlines]
    corruption_path = phantom_dir / "corruption.json"
    if corruption_path.exists():
        report = load_corruption_report(corruption_path)
        for blob in report["blobs"]:
            points.append(np.asarray(blob["center"], dtype=np.float64))
            labels.append(0)
    return np.asarray(points), np.asarray(labels, dtype=np.int64)


def extract_centerlines(
    mask: Volume,
    centerlines_gt,
    radius_field: Volume,
    seed_points,
    seed_labels,
    config: PipelineConfig,
    bridge: bool = True,
):
    """Full extraction on an in-memory mask; returns (paths, labeled skeleton)."""
    skel_vol = thin(mask)
    skel = connected_components(skel_vol)
    if len(skel) == 0:
        return [], skel
    subset = resample(skel, config.resample_n, rng_seed=config.rng_seed)
    seeds = seeds_from_points(subset, seed_points, seed_labels)
    cfg = GroupingConfig(
        lam=config.gag_lambda, k=min(config.knn_k, max(1, len(subset) - 1)), seeds=seeds
    )
    labeled_subset = propagate_labels(subset, cfg)
    labeled = apply_component_labels(skel, labeled_subset)
    cleaned = remove_false_positives(labeled)
    if len(cleaned) == 0:
        return [], labeled
    if bridge:
        params = HeatmapParams(config.low_value, config.combine_skeleton_value)
        dist = euclidean_distance_to_centerline(
            mask.dims, mask.spacing, [c.points for c in centerlines_gt]
        )
        heat = build_heatmap(dist, radius_field, params)
        cost = build_cost_map(heat, cleaned, params)
        paths = connect_segments(cleaned, cost, bridge_affinity=config.combine_skeleton_value)
    else:
        paths = trace_paths(cleaned)
    return paths, labeled


def run_extract(
    phantom_dir,
    out_dir,
    config: PipelineConfig,
    seeds_path=None,
    use_corrupted: bool = True,
    bridge: bool = True,
) -> dict:
    phantom_dir = Path(phantom_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask_base = phantom_dir / "corrupted_mask"
    if not (use_corrupted and mask_base.with_suffix(".json").exists()):
        mask_base = phantom_dir / "mask"
    mask = load_volume(mask_base)
    radius_field = load_volume(phantom_dir / "radius")
    centerlines_gt = load_centerlines(phantom_dir / "centerlines.json")
    if seeds_path is not None:
        seed_points, seed_labels = load_seeds_csv(seeds_path)
    else:
        seed_points, seed_labels = _ground_truth_seeds(phantom_dir)

    paths, labeled = extract_centerlines(
        mask, centerlines_gt, radius_field, seed_points, seed_labels, config, bridge=bridge
    )
    save_points_csv(labeled, out_dir / "labeled_skeleton.csv")
    save_paths(paths, out_dir / "centerlines_extracted.json")
    inputs = {
        "mask.json": mask_base.with_suffix(".json"),
        "mask.raw": mask_base.with_suffix(".raw"),
        "radius.json": phantom_dir / "radius.json",
        "radius.raw": phantom_dir / "radius.raw",
        "centerlines.json": phantom_dir / "centerlines.json",
    }
    if seeds_path is not None:
        inputs["seeds.csv"] = Path(seeds_path)
    outputs = {
        "labeled_skeleton.csv": out_dir / "labeled_skeleton.csv",
        "centerlines_extracted.json": out_dir / "centerlines_extracted.json",
    }
    _write_manifest(out_dir, "extract", config, inputs, outputs)
    n_bridges = sum(len(p.bridged_spans) for p in paths)
    return {"paths": len(paths), "bridges": n_bridges, "out_dir": str(out_dir)}


def run_evaluate(
    phantom_dir,
    extracted_path,
    out_dir,
    config: PipelineConfig,
    threshold_rule: str = RULE_FIXED,
) -> dict:
    phantom_dir = Path(phantom_dir)
    extracted_path = Path(extracted_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask = load_volume(phantom_dir / "mask")
    sp = np.asarray(mask.spacing)
    centerlines_gt = load_centerlines(phantom_dir / "centerlines.json")
    references = [(c.label, c.points * sp, c.radii_mm) for c in centerlines_gt]
    names = {c.label: f"branch-{c.label}" for c in centerlines_gt}
    paths = load_paths(extracted_path)
    extracted = [(p.label, p.points * sp) for p in paths]
    report = evaluate_centerlines(
        references,
        extracted,
        threshold_rule=threshold_rule,
        threshold_mm=config.match_threshold_mm,
        clinical_radius_mm=config.clinical_radius_mm,
        names=names,
    )
    save_report(report, out_dir / "report.json", out_dir / "report.txt")
    inputs = {
        "centerlines.json": phantom_dir / "centerlines.json",
        "extracted.json": extracted_path,
    }
    outputs = {"report.json": out_dir / "report.json", "report.txt": out_dir / "report.txt"}
    _write_manifest(out_dir, "evaluate", config, inputs, outputs)
    return report.to_json_dict()


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _dims_triple(text):
    parts = [int(v) for v in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected DIM or DX,DY,DZ")
    return tuple(parts)


def _spacing_triple(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected S or SX,SY,SZ")
    return tuple(parts)


def _add_phantom_flags(parser):
    parser.add_argument("--dims", type=_dims_triple, default=(64, 64, 64))
    parser.add_argument("--spacing", type=_spacing_triple, default=(1.0, 1.0, 1.0))
    parser.add_argument("--branch-count", type=int, default=1)
    parser.add_argument("--tortuosity", type=float, default=0.0)
    parser.add_argument("--radius-min-mm", type=float, default=1.0)
    parser.add_argument("--radius-max-mm", type=float, default=2.5)
    parser.add_argument("--gap-count", type=int, default=0)
    parser.add_argument("--gap-len-min", type=int, default=3)
    parser.add_argument("--gap-len-max", type=int, default=6)
    parser.add_argument("--fp-blob-count", type=int, default=0)
    parser.add_argument("--fp-blob-radius-min", type=int, default=2)
    parser.add_argument("--fp-blob-radius-max", type=int, default=4)


def _corruption_from_args(args, config):
    if args.gap_count == 0 and args.fp_blob_count == 0:
        return None
    return CorruptionSpec(
        gap_count=args.gap_count,
        gap_length_voxels=(args.gap_len_min, args.gap_len_max),
        fp_blob_count=args.fp_blob_count,
        fp_blob_radius_voxels=(args.fp_blob_radius_min, args.fp_blob_radius_max),
        rng_seed=config.rng_seed,
    )


def _cmd_phantom(args):
    config = _config_from_args(args)
    info = run_phantom(
        args.out_dir,
        args.dims,
        args.spacing,
        args.branch_count,
        args.tortuosity,
        (args.radius_min_mm, args.radius_max_mm),
        config,
        corruption=_corruption_from_args(args, config),
    )
    print(json.dumps(info))
    return 0


def _cmd_skeletonize(args):
    config = _config_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask = load_volume(args.mask)
    skel = connected_components(thin(mask))
    save_points_csv(skel, out_dir / "skeleton.csv")
    base = Path(args.mask)
    if base.suffix in (".json", ".raw"):
        base = base.with_suffix("")
    inputs = {"mask.json": base.with_suffix(".json"), "mask.raw": base.with_suffix(".raw")}
    _write_manifest(out_dir, "skeletonize", config, inputs, {"skeleton.csv": out_dir / "skeleton.csv"})
    print(json.dumps({"points": len(skel), "components": int(skel.component.max(initial=0))}))
    return 0


def _cmd_label(args):
    config = _config_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask = load_volume(args.mask)
    skel = load_points_csv(args.skeleton, mask.dims, mask.spacing)
    if args.seeds is not None:
        seed_points, seed_labels = load_seeds_csv(args.seeds)
    else:
        seed_points, seed_labels = _ground_truth_seeds(Path(args.phantom_dir))
    subset = resample(skel, config.resample_n, rng_seed=config.rng_seed)
    seeds = seeds_from_points(subset, seed_points, seed_labels)
    cfg = GroupingConfig(
        lam=config.gag_lambda, k=min(config.knn_k, max(1, len(subset) - 1)), seeds=seeds
    )
    labeled = apply_component_labels(skel, propagate_labels(subset, cfg))
    save_points_csv(labeled, out_dir / "labeled_skeleton.csv")
    inputs = {"skeleton.csv": Path(args.skeleton)}
    if args.seeds is not None:
        inputs["seeds.csv"] = Path(args.seeds)
    _write_manifest(
        out_dir, "label", config, inputs, {"labeled_skeleton.csv": out_dir / "labeled_skeleton.csv"}
    )
    print(json.dumps({"points": len(labeled), "classes": len(set(labeled.label.tolist()))}))
    return 0


def _cmd_extract(args):
    config = _config_from_args(args)
    info = run_extract(
        args.phantom_dir,
        args.out_dir,
        config,
        seeds_path=args.seeds,
        use_corrupted=not args.uncorrupted,
        bridge=not args.no_bridge,
    )
    print(json.dumps(info))
    return 0


def _cmd_evaluate(args):
    config = _config_from_args(args)
    extracted = args.extracted
    if extracted is None:
        extracted = Path(args.out_dir) / "centerlines_extracted.json"
    result = run_evaluate(
        args.phantom_dir, extracted, args.out_dir, config, threshold_rule=args.threshold_rule
    )
    print((Path(args.out_dir) / "report.txt").read_text(), end="")
    agg = result["aggregate"]
    print(json.dumps({"aggregate": agg}))
    return 0


def _cmd_run_all(args):
    config = _config_from_args(args)
    out_dir = Path(args.out_dir)
    run_phantom(
        out_dir,
        args.dims,
        args.spacing,
        args.branch_count,
        args.tortuosity,
        (args.radius_min_mm, args.radius_max_mm),
        config,
        corruption=_corruption_from_args(args, config),
    )
    info = run_extract(out_dir, out_dir, config, bridge=not args.no_bridge)
    result = run_evaluate(
        out_dir, out_dir / "centerlines_extracted.json", out_dir, config,
        threshold_rule=args.threshold_rule,
    )
    print((out_dir / "report.txt").read_text(), end="")
    print(json.dumps({"extract": info, "aggregate": result["aggregate"]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesseltrace",
        description="Template-free 3D vessel centerline extraction on voxel grids.",
    )
    parser.add_argument("--version", action="version", version=f"vesseltrace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a vascular phantom (optionally corrupted)")
    _add_phantom_flags(p)
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("skeletonize", help="thin a mask and label its components")
    p.add_argument("--mask", required=True, help="volume base path (or .json/.raw)")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_skeletonize)

    p = sub.add_parser("label", help="propagate seed labels over a skeleton CSV")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--mask", required=True, help="volume the skeleton came from")
    p.add_argument("--seeds", default=None, help="seed CSV (x,y,z,label)")
    p.add_argument("--phantom-dir", default=None, help="derive seeds from ground truth")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("extract", help="skeletonize, label, bridge and trace centerlines")
    p.add_argument("--phantom-dir", required=True)
    p.add_argument("--seeds", default=None, help="seed CSV; defaults to ground-truth seeding")
    p.add_argument("--uncorrupted", action="store_true", help="ignore the corrupted mask")
    p.add_argument("--no-bridge", action="store_true", help="skip gap bridging")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("evaluate", help="overlap metrics against ground truth")
    p.add_argument("--phantom-dir", required=True)
    p.add_argument("--extracted", default=None, help="extracted centerline JSON")
    p.add_argument("--threshold-rule", choices=["fixed_mm", "local_radius"], default="fixed_mm")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("run-all", help="phantom + extract + evaluate in one directory")
    _add_phantom_flags(p)
    p.add_argument("--no-bridge", action="store_true")
    p.add_argument("--threshold-rule", choices=["fixed_mm", "local_radius"], default="fixed_mm")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run_all)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "label" and args.seeds is None and args.phantom_dir is None:
        parser.error("label requires --seeds or --phantom-dir")
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():  # console script
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
