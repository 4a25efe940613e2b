"""End-to-end inference dataflow on phantoms.

Detection boxes are expanded by a margin, the label volume is cropped and
resized to a fixed patch, the distance-map generator stands in for the
segmentation network, and the thresholded patch mask is mapped back to the
original grid.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._validation import check_non_negative, check_positive_triple, check_probability
from .anatomy import fdi_to_channel
from .distmap import make_gt_distance, threshold_to_mask
from .heatmap import Detection, expand_box, save_detections
from .metrics import EvalReport, evaluate_sets, oir
from .phantom import PhantomSpec, PhantomTruth, generate_phantom, perturb_predictions
from .volume import BBox3, Volume3, crop_resize, save_volume

PATCH_SIZE = (128, 64, 64)  # largest box axis first


def patch_dims(box: BBox3, patch_size=PATCH_SIZE) -> tuple:
    """Assign the largest patch size to the longest box axis, and so on.

    Equal extents keep x, y, z order.
    """
    sizes = sorted((int(s) for s in patch_size), reverse=True)
    order = sorted(range(3), key=lambda a: (-box.extent[a], a))
    out = [0, 0, 0]
    for a, s in zip(order, sizes):
        out[a] = s
    return tuple(out)


def _inverse_index(v: np.ndarray, lo: float, step: float, n: int) -> np.ndarray:
    """Patch index whose sample point is nearest to original voxel ``v``;
    ties go to the lower index."""
    t = (v - lo) / step - 0.5
    j = np.ceil(t - 0.5).astype(np.int64)
    return np.clip(j, 0, n - 1)


def paste_patch(patch_mask: np.ndarray, box: BBox3, dims) -> np.ndarray:
    """Map a patch mask sampled over ``box`` back onto a ``dims`` grid."""
    nx, ny, nz = dims
    out = np.zeros((nz, ny, nx), dtype=np.uint8)
    (x0, y0, z0), (x1, y1, z1) = box.voxel_range(dims)
    if x0 > x1 or y0 > y1 or z0 > z1:
        return out
    pz, py, px = patch_mask.shape
    idx = []
    for a, (lo_v, hi_v, n) in enumerate(zip((x0, y0, z0), (x1, y1, z1), (px, py, pz))):
        step = box.extent[a] / n
        idx.append(_inverse_index(np.arange(lo_v, hi_v + 1), box.min[a], step, n))
    out[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] = patch_mask[np.ix_(idx[2], idx[1], idx[0])]
    return out


def _box_intersects(box: BBox3, dims) -> bool:
    (x0, y0, z0), (x1, y1, z1) = box.voxel_range(dims)
    return x0 <= x1 and y0 <= y1 and z0 <= z1


def segment_one(labels: Volume3, det: Detection, margin: float = 10.0, tau: float = 0.5,
                patch_size=PATCH_SIZE) -> np.ndarray:
    """Binary uint8 mask of one detected tooth on the original grid."""
    box = expand_box(det.bbox, margin)
    if not _box_intersects(box, labels.dims):
        raise ValueError(f"box of tooth {det.fdi} does not intersect the volume")
    pdims = patch_dims(box, patch_size)
    patch = crop_resize(labels, box, pdims, "nearest")
    dist = make_gt_distance(patch.data, fdi_to_channel(det.fdi) + 1)
    return paste_patch(threshold_to_mask(dist, tau), box, labels.dims)


def segment_instances(volume, labels, dets, margin: float = 10.0, tau: float = 0.5,
                      patch_size=PATCH_SIZE, n_jobs: int = 1) -> list:
    """Per-detection ``(fdi, Volume3 mask)`` in detection order.

    ``volume`` only fixes the grid; the ground-truth distance generator reads
    the aligned ``labels``.
    """
    if not isinstance(labels, Volume3):
        labels = Volume3(np.asarray(labels))
    if volume is not None:
        shape = np.asarray(volume).shape
        if shape != labels.data.shape:
            raise ValueError(f"labels {labels.data.shape} not aligned with volume {shape}")
    check_non_negative(margin, "margin")
    check_non_negative(tau, "tau")
    check_positive_triple(patch_size, "patch_size")
    dets = list(dets)
    masks = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(segment_one)(labels, d, margin, tau, patch_size) for d in dets
    )
    return [(d.fdi, Volume3(m, labels.spacing)) for d, m in zip(dets, masks)]


def mask_disagreement(pred, truth) -> float:
    """Voxels that differ, as a fraction of the true object's size."""
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    n = int(t.sum())
    diff = int((p ^ t).sum())
    if n == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / n


def oir_by_margin(truth: PhantomTruth, dets, margins) -> dict:
    """Mean OIR of margin-expanded detections per margin.

    Teeth without a detection of the same code count as 0.
    """
    best = {}
    for d in dets:
        if d.fdi not in best or d.score > best[d.fdi].score:
            best[d.fdi] = d
    out = {}
    for m in margins:
        vals = []
        for t in truth.teeth:
            d = best.get(t.fdi)
            vals.append(oir(truth.mask(t.fdi), expand_box(d.bbox, m)) if d else 0.0)
        out[m] = sum(vals) / len(vals) if vals else 0.0
    return out


class InstanceSegmenter(BaseEstimator):
    """``predict((labels, dets))`` returns per-tooth masks on the original grid."""

    def __init__(self, margin=10.0, tau=0.5, patch_size=PATCH_SIZE, n_jobs=1):
        self.margin = margin
        self.tau = tau
        self.patch_size = patch_size
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        check_non_negative(self.margin, "margin")
        check_non_negative(self.tau, "tau")
        check_positive_triple(self.patch_size, "patch_size")
        return self

    def predict(self, X):
        labels, dets = X
        return segment_instances(None, labels, dets, self.margin, self.tau,
                                 self.patch_size, self.n_jobs)


# --- experiment runner -----------------------------------------------------

DEFAULT_CONFIG = {
    "phantom": {},
    "seeds": [0],
    "noise": {"center_sigma": 0.0, "size_sigma": 0.0, "drop_prob": 0.0, "misid_prob": 0.0},
    "noise_seed_offset": 1000,
    "margins": [0, 2, 5, 10],
    "segment_margin": 10.0,
    "tau": 0.5,
    "iou_thresh": 0.5,
    "segment": False,
    "save_volumes": False,
    "svg": True,
    "output_dir": "run",
}


def load_config(config) -> dict:
    if isinstance(config, (str, Path)):
        try:
            config = json.loads(Path(config).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{config}: invalid JSON ({exc})") from exc
    if not isinstance(config, dict):
        raise ValueError("experiment config must be a JSON object")
    unknown = set(config) - set(DEFAULT_CONFIG)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    for k, v in config.items():
        if k == "noise":
            extra = set(v) - set(DEFAULT_CONFIG["noise"])
            if extra:
                raise ValueError(f"unknown noise keys: {sorted(extra)}")
            cfg["noise"].update(v)
        else:
            cfg[k] = v
    seeds = cfg["seeds"]
    if isinstance(seeds, int):
        cfg["seeds"] = list(range(seeds))
    if not cfg["seeds"] or any(int(s) != s or s < 0 for s in cfg["seeds"]):
        raise ValueError("seeds must be a non-empty list of non-negative integers")
    for k in ("drop_prob", "misid_prob"):
        check_probability(cfg["noise"][k], k)
    for k in ("center_sigma", "size_sigma"):
        check_non_negative(cfg["noise"][k], k)
    for m in cfg["margins"]:
        check_non_negative(m, "margin")
    check_probability(cfg["iou_thresh"], "iou_thresh")
    if "seed" in cfg["phantom"]:
        raise ValueError("set phantom seeds through 'seeds', not phantom.seed")
    PhantomSpec.from_json(cfg["phantom"])  # validate early
    return cfg


def _run_one(cfg, seed, out_dir):
    truth = generate_phantom(PhantomSpec.from_json({**cfg["phantom"], "seed": seed}))
    noise = cfg["noise"]
    dets = perturb_predictions(truth, noise["center_sigma"], noise["size_sigma"],
                               noise["drop_prob"], noise["misid_prob"],
                               seed=seed + cfg["noise_seed_offset"])
    name = f"phantom_{seed:04d}"
    sub = out_dir / name
    sub.mkdir(parents=True, exist_ok=True)
    save_detections(truth.gt_detections(), sub / "gt.json")
    save_detections(dets, sub / "dets.json")
    if cfg["save_volumes"]:
        save_volume(Volume3(truth.intensity), sub / "intensity")
        save_volume(Volume3(truth.labels), sub / "labels")
    seg_rows = []
    if cfg["segment"]:
        masks = segment_instances(truth.intensity, truth.labels, dets,
                                  cfg["segment_margin"], cfg["tau"])
        for det, (fdi, mask) in zip(dets, masks):
            true_mask = truth.labels == fdi_to_channel(fdi) + 1
            seg_rows.append((name, fdi, int(mask.data.sum()), int(true_mask.sum()),
                             mask_disagreement(mask.data, true_mask)))
            if cfg["save_volumes"]:
                save_volume(mask, sub / "masks" / f"tooth_{fdi}")
    return name, truth, dets, oir_by_margin(truth, dets, cfg["margins"]), seg_rows


def run_experiment(config, output_dir=None, n_jobs: int = 1) -> EvalReport:
    """Generate phantoms, perturb, segment, evaluate; write everything under
    the output directory. Phantoms run in parallel; results are gathered in
    seed order, so output does not depend on ``n_jobs``."""
    cfg = load_config(config)
    out = Path(output_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    results = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(_run_one)(cfg, int(s), out) for s in cfg["seeds"]
    )
    names = [r[0] for r in results]
    preds = [r[2] for r in results]
    gts = [r[1].gt_pairs() for r in results]
    labels = [r[1].labels for r in results]
    report = evaluate_sets(preds, gts, labels, cfg["iou_thresh"], names=names)
    report.write(out, svg=cfg["svg"])

    with (out / "oir_margin.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["margin"] + names + ["mean"])
        for m in cfg["margins"]:
            vals = [r[3][m] for r in results]
            w.writerow([m] + [f"{v:.6f}" for v in vals] + [f"{sum(vals) / len(vals):.6f}"])
    if cfg["segment"]:
        with (out / "segmentation.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "fdi", "pred_voxels", "true_voxels", "disagreement"])
            for r in results:
                for name, fdi, npred, ntrue, dis in r[4]:
                    w.writerow([name, fdi, npred, ntrue, f"{dis:.6f}"])
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return report
