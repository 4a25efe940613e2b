"""Tooth detection and identification kernels on synthetic CBCT phantoms.

Heatmap encoding/decoding, focal and Gaussian-disentanglement losses, chamfer
distance maps, detection metrics, a seeded phantom generator and an
end-to-end pipeline, with sklearn-style estimator wrappers.
"""
from .anatomy import (FDI_CODES, LOWER_ARCH, UPPER_ARCH, AdjacencySet, channel_to_fdi,
                      default_adjacency, fdi_to_channel, load_adjacency)
from .distmap import (DistanceMapSegmenter, chamfer_edt, exact_edt_bruteforce,
                      make_gt_distance, threshold_to_mask)
from .heatmap import (Detection, GaussianSpec, HeatmapEncoder, PeakDetector, assemble_bbox,
                      decode_peaks, encode_ground_truth, expand_box, load_detections,
                      render_gaussian, save_detections)
from .losses import (FocalParams, LossWeights, bbox_mse, distance_mse, focal_loss, gd_loss,
                     intermediate_loss, total_loss)
from .metrics import (ConfusionMatrix, EvalReport, ap50, confusion_matrix, evaluate,
                      evaluate_sets, iou, match_detections, oir, precision_recall)
from .optimize import (DivergenceError, HeatmapOptimizer, OptimizerConfig, OptTrace,
                       disentangle_report, optimize_heatmaps, two_tooth_fixture)
from .phantom import PhantomSpec, PhantomTruth, generate_phantom, perturb_predictions
from .pipeline import InstanceSegmenter, run_experiment, segment_instances
from .volume import BBox3, Volume3, crop_resize, load_volume, normalize, save_volume

__version__ = "0.1.0"

__all__ = [
    "FDI_CODES", "LOWER_ARCH", "UPPER_ARCH", "AdjacencySet", "channel_to_fdi",
    "default_adjacency", "fdi_to_channel", "load_adjacency",
    "DistanceMapSegmenter", "chamfer_edt", "exact_edt_bruteforce", "make_gt_distance",
    "threshold_to_mask",
    "Detection", "GaussianSpec", "HeatmapEncoder", "PeakDetector", "assemble_bbox",
    "decode_peaks", "encode_ground_truth", "expand_box", "load_detections", "render_gaussian",
    "save_detections",
    "FocalParams", "LossWeights", "bbox_mse", "distance_mse", "focal_loss", "gd_loss",
    "intermediate_loss", "total_loss",
    "ConfusionMatrix", "EvalReport", "ap50", "confusion_matrix", "evaluate", "evaluate_sets",
    "iou", "match_detections", "oir", "precision_recall",
    "DivergenceError", "HeatmapOptimizer", "OptimizerConfig", "OptTrace", "disentangle_report",
    "optimize_heatmaps", "two_tooth_fixture",
    "PhantomSpec", "PhantomTruth", "generate_phantom", "perturb_predictions",
    "InstanceSegmenter", "run_experiment", "segment_instances",
    "BBox3", "Volume3", "crop_resize", "load_volume", "normalize", "save_volume",
]
