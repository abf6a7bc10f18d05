"""Template-free 3D vessel centerline extraction on voxel grids.

Pipeline stages: synthetic phantom generation with ground truth, topology
preserving thinning, geometry-aware point grouping and seeded labeling,
label-guided minimal-cost-path gap bridging, and standardized centerline
overlap metrics (OV / OF / OT).
"""

__version__ = "0.1.0"

from .grouping import (
    GroupingConfig,
    apply_component_labels,
    gag_distance,
    knn_graph,
    labeling_accuracy,
    neighborhood_purity,
    propagate_labels,
    remove_false_positives,
    seeds_from_points,
)
from .metrics import (
    Correspondence,
    OverlapReport,
    correspond,
    evaluate_centerlines,
    overlap_of,
    overlap_ot,
    overlap_ov,
    resample_polyline,
)
from .pathfind import (
    CenterlinePath,
    DisjointSet,
    PairQueueEntry,
    build_pair_queue,
    connect_segments,
    dijkstra_path,
    trace_paths,
)
from .phantom import (
    CorruptionSpec,
    VesselPhantom,
    corrupt,
    generate_tree,
    reference_labels,
)
from .skeleton import (
    SkeletonPointSet,
    connected_components,
    endpoints,
    resample,
    thin,
)
from .volume import (
    EPS_AFFINITY,
    HeatmapParams,
    Volume,
    build_cost_map,
    build_heatmap,
    euclidean_distance_to_centerline,
    load_volume,
    save_volume,
)

__all__ = [name for name in dir() if not name.startswith("_")]
