"""Map-relative localization by aligning semantic mask edges to a labeled
3D edge map with a confusion-marginalized symmetric Chamfer objective."""

from ._version import __version__
from .alignment import (ClassEdgeSets, DistanceFieldStack, LossConfig,
                        NoEvidenceError, build_distance_fields, extract_edges,
                        forward_loss, huber, reverse_loss, total_loss)
from .classes import CLASS_NAMES, IGNORE_LABEL, NUM_CLASSES, class_name
from .crossmodal import (ConfusionMatrix, CorrespondenceSet,
                         DegenerateCorrespondencesError, Homography,
                         estimate_confusion, fit_homography, posterior_weights,
                         reprojection_rms, warp_mask)
from .evaluation import (EdgeBinRow, FrameError, GateSweepRow, TrajectoryMetrics,
                         bin_by_edges, compute_metrics, gate_sweep)
from .geometry import (CameraIntrinsics, PlanarTranslation, ProjectedSemanticPoints,
                       RigidPose, ViewGeometry, project_pixel, project_pixels,
                       render_labeled_points, world_to_camera)
from .semantic_map import (ColoredPointCloud, EmptyMapError, LabeledView,
                           SemanticPointCloud, VoxelEdgeMap, fuse_labels,
                           voxelize_and_prune)
from .solver import (Frame, LocalizationResult, SearchConfig, StageTrace,
                     localize_frame, localize_trajectory)
from .synth import (CorruptionSpec, FrameSample, SceneSpec, corrupt_mask,
                    generate_world, nadir_view, render_truth_mask, sample_frames)

__all__ = [
    "__version__",
    "CLASS_NAMES", "IGNORE_LABEL", "NUM_CLASSES", "class_name",
    "CameraIntrinsics", "PlanarTranslation", "ProjectedSemanticPoints",
    "RigidPose", "ViewGeometry", "project_pixel", "project_pixels",
    "render_labeled_points", "world_to_camera",
    "ClassEdgeSets", "DistanceFieldStack", "LossConfig", "NoEvidenceError",
    "build_distance_fields", "extract_edges", "forward_loss", "huber",
    "reverse_loss", "total_loss",
    "ConfusionMatrix", "CorrespondenceSet", "DegenerateCorrespondencesError",
    "Homography", "estimate_confusion", "fit_homography", "posterior_weights",
    "reprojection_rms", "warp_mask",
    "ColoredPointCloud", "EmptyMapError", "LabeledView", "SemanticPointCloud",
    "VoxelEdgeMap", "fuse_labels", "voxelize_and_prune",
    "Frame", "LocalizationResult", "SearchConfig", "StageTrace",
    "localize_frame", "localize_trajectory",
    "CorruptionSpec", "FrameSample", "SceneSpec", "corrupt_mask",
    "generate_world", "nadir_view", "render_truth_mask", "sample_frames",
    "EdgeBinRow", "FrameError", "GateSweepRow", "TrajectoryMetrics",
    "bin_by_edges", "compute_metrics", "gate_sweep",
]
