"""Detection and identification metrics: IOU, OIR, PR/AP50, confusion matrix."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .anatomy import FDI_CODES, N_TEETH, fdi_to_channel
from .heatmap import Detection, load_detections
from .volume import BBox3, load_volume


def iou(a: BBox3, b: BBox3) -> float:
    inter = 1.0
    for lo_a, hi_a, lo_b, hi_b in zip(a.min, a.max, b.min, b.max):
        inter *= max(0.0, min(hi_a, hi_b) - max(lo_a, lo_b))
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return inter / union


def box_voxel_mask(box: BBox3, shape) -> np.ndarray:
    """Voxels of a ``(nz, ny, nx)`` grid whose centers lie inside ``box``."""
    nz, ny, nx = shape
    (x0, y0, z0), (x1, y1, z1) = box.voxel_range((nx, ny, nz))
    out = np.zeros(shape, dtype=bool)
    if x0 <= x1 and y0 <= y1 and z0 <= z1:
        out[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] = True
    return out


def oir(mask, box: BBox3) -> float:
    """Fraction of the object's voxels whose centers fall inside ``box``."""
    m = np.asarray(mask).astype(bool)
    total = int(m.sum())
    if total == 0:
        raise ValueError("object include ratio is undefined for an empty mask")
    nz, ny, nx = m.shape
    (x0, y0, z0), (x1, y1, z1) = box.voxel_range((nx, ny, nz))
    if x0 > x1 or y0 > y1 or z0 > z1:
        return 0.0
    inside = int(m[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1].sum())
    return inside / total


def _gt_pair(g):
    if isinstance(g, Detection):
        return g.fdi, g.bbox
    fdi, box = g
    return int(fdi), box


def _rank_key(det: Detection, image: int = 0):
    return (-det.score, fdi_to_channel(det.fdi), image)


def _assign(dets, gts, iou_thresh, class_aware):
    """Greedy assignment; returns (rank order, gt index or None per detection)."""
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda k: (_rank_key(dets[k]), k))
    taken = [False] * len(gts)
    assigned = [None] * len(dets)
    for k in order:
        det = dets[k]
        box = det.bbox
        best, best_iou = None, -1.0
        for g, (fdi, gbox) in enumerate(gts):
            if taken[g] or (class_aware and fdi != det.fdi):
                continue
            v = iou(box, gbox)
            if v > best_iou:
                best, best_iou = g, v
        if best is not None and best_iou >= iou_thresh:
            taken[best] = True
            assigned[k] = best
    return order, assigned


def match_detections(dets, gts, iou_thresh: float = 0.5, class_aware: bool = True) -> list:
    """Greedy matching in descending score order.

    Each detection takes the still-unmatched ground truth with the highest
    IOU (of the same tooth when ``class_aware``), provided that IOU reaches
    ``iou_thresh``. Returns ``(detection, gt_index or None)`` in ranked order.
    """
    dets = list(dets)
    order, assigned = _assign(dets, [_gt_pair(g) for g in gts], iou_thresh, class_aware)
    return [(dets[k], assigned[k]) for k in order]


def precision_recall(matches, n_gt: int) -> tuple:
    """``TP / (TP + FP)`` and ``TP / (TP + FN)``; empty denominators give 1."""
    tp = sum(1 for _, g in matches if g is not None)
    fp = len(matches) - tp
    fn = n_gt - tp
    if fn < 0:
        raise ValueError("more true positives than ground-truth objects")
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


@dataclass
class PRCurve:
    recall: list
    precision: list
    ranked: list  # (score, is_true_positive, image, fdi) in rank order


def _as_images(items) -> list:
    items = list(items)
    if not items:
        return [[]]
    first = items[0]
    if isinstance(first, Detection) or (
        isinstance(first, tuple) and len(first) == 2 and isinstance(first[1], BBox3)
    ):
        return [items]
    return [list(x) for x in items]


def ap50(dets, gts, iou_thresh: float = 0.5) -> tuple:
    """Every-point interpolated average precision over a test set.

    ``dets`` and ``gts`` are per-image lists (a flat list is one image).
    Detections are ranked by descending score, ties by channel then image.
    Returns ``(ap, PRCurve)``.
    """
    dets_i, gts_i = _as_images(dets), _as_images(gts)
    if len(dets_i) != len(gts_i):
        raise ValueError(f"{len(dets_i)} prediction images vs {len(gts_i)} ground-truth images")
    entries = []
    for img, (d, g) in enumerate(zip(dets_i, gts_i)):
        _, assigned = _assign(d, [_gt_pair(x) for x in g], iou_thresh, True)
        entries.extend((d[k], img, assigned[k] is not None) for k in range(len(d)))
    entries.sort(key=lambda t: _rank_key(t[0], t[1]))
    n_gt = sum(len(g) for g in gts_i)
    flags = [f for _, _, f in entries]
    curve = PRCurve([], [], [(det.score, f, img, det.fdi) for det, img, f in entries])
    if not entries or n_gt == 0:
        return 0.0, curve

    tp = 0
    precisions = []
    for n, f in enumerate(flags, start=1):
        tp += f
        precisions.append(Fraction(tp, n))
        curve.precision.append(tp / n)
        curve.recall.append(tp / n_gt)
    # monotone envelope from the right
    envelope = precisions[:]
    for n in range(len(envelope) - 2, -1, -1):
        envelope[n] = max(envelope[n], envelope[n + 1])
    area = sum((env for env, f in zip(envelope, flags) if f), Fraction(0))
    return float(area / n_gt), curve


@dataclass
class ConfusionMatrix:
    """Rows are actual teeth, columns predicted teeth (channel order)."""

    counts: np.ndarray
    gt_counts: np.ndarray
    normalized: bool = True

    @property
    def matrix(self) -> np.ndarray:
        if not self.normalized:
            return self.counts.astype(float)
        out = np.zeros_like(self.counts, dtype=float)
        rows = self.gt_counts > 0
        out[rows] = self.counts[rows] / self.gt_counts[rows, None]
        return out

    def to_csv(self, path) -> None:
        m = self.matrix
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["actual\\predicted"] + list(FDI_CODES))
            for fdi, row in zip(FDI_CODES, m):
                w.writerow([fdi] + [_fmt(v) for v in row])


def confusion_matrix(dets, gts, iou_thresh: float = 0.5, normalize: bool = True) -> ConfusionMatrix:
    """Class-agnostic matching; each match adds one to ``[actual, predicted]``."""
    counts = np.zeros((N_TEETH, N_TEETH), dtype=np.int64)
    gt_counts = np.zeros(N_TEETH, dtype=np.int64)
    for d, g in zip(_as_images(dets), _as_images(gts)):
        g = [_gt_pair(x) for x in g]
        for fdi, _ in g:
            gt_counts[fdi_to_channel(fdi)] += 1
        for det, gi in match_detections(d, g, iou_thresh, class_aware=False):
            if gi is not None:
                counts[fdi_to_channel(g[gi][0]), fdi_to_channel(det.fdi)] += 1
    return ConfusionMatrix(counts, gt_counts, normalize)


@dataclass
class ImageResult:
    image: str
    n_gt: int
    n_det: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    ap50: float
    mean_iou: float
    mean_oir: float
    per_tooth: dict = field(default_factory=dict)  # fdi -> (iou, oir) or None if missed


@dataclass
class EvalReport:
    ap50: float
    mean_iou: float
    mean_oir: float
    precision: float
    recall: float
    confusion: ConfusionMatrix
    pr_curve: PRCurve
    images: list
    per_class: dict  # fdi -> {"n_gt", "tp", "recall", "mean_iou", "mean_oir"}

    def summary(self) -> dict:
        return {"ap50": self.ap50, "mean_iou": self.mean_iou, "mean_oir": self.mean_oir,
                "precision": self.precision, "recall": self.recall}

    def write(self, out_dir, svg: bool = False) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(self, out / "report.csv")
        write_pr_csv(self.pr_curve, out / "pr_curve.csv")
        write_per_class_csv(self, out / "per_class.csv")
        self.confusion.to_csv(out / "confusion.csv")
        if svg:
            from .svg import line_plot

            line_plot({"PR": (self.pr_curve.recall, self.pr_curve.precision)},
                      out / "pr_curve.svg", xlabel="recall", ylabel="precision",
                      title=f"AP50 = {self.ap50:.4f}", xlim=(0, 1), ylim=(0, 1))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


REPORT_COLUMNS = ["image", "n_gt", "n_det", "tp", "fp", "fn", "precision", "recall",
                  "ap50", "mean_iou", "mean_oir"]


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.images:
            w.writerow([r.image] + [_fmt(getattr(r, c)) for c in REPORT_COLUMNS[1:]])
        n_gt = sum(r.n_gt for r in report.images)
        n_det = sum(r.n_det for r in report.images)
        tp = sum(r.tp for r in report.images)
        w.writerow(["ALL", n_gt, n_det, tp, n_det - tp, n_gt - tp,
                    _fmt(report.precision), _fmt(report.recall), _fmt(report.ap50),
                    _fmt(report.mean_iou), _fmt(report.mean_oir)])


def write_pr_csv(curve: PRCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "image", "fdi", "score", "tp", "precision", "recall"])
        for n, ((score, tp, image, fdi), p, r) in enumerate(
            zip(curve.ranked, curve.precision, curve.recall), start=1
        ):
            w.writerow([n, image, fdi, _fmt(score), int(tp), _fmt(p), _fmt(r)])


def write_per_class_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fdi", "n_gt", "tp", "recall", "mean_iou", "mean_oir"])
        for fdi in FDI_CODES:
            c = report.per_class[fdi]
            w.writerow([fdi, c["n_gt"], c["tp"], _fmt(c["recall"]), _fmt(c["mean_iou"]),
                        _fmt(c["mean_oir"])])


def _mean(values) -> float:
    values = list(values)
    return float(sum(values) / len(values)) if values else 0.0


def evaluate_sets(preds, gts, label_volumes=None, iou_thresh: float = 0.5,
                  matched_only: bool = False, names=None) -> EvalReport:
    """Aggregate every metric over parallel per-image lists.

    Per ground-truth tooth, IOU and OIR use the highest-scoring detection
    carrying the same tooth code; a tooth without one scores 0 (or is
    skipped when ``matched_only``). OIR uses the label volume
    (``label == channel + 1``) when given, else the ground-truth box.
    """
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction sets vs {len(gts)} ground-truth sets")
    if label_volumes is not None and len(label_volumes) != len(gts):
        raise ValueError("label volume list does not match the ground-truth list")
    names = names or [str(k) for k in range(len(gts))]
    gts = [[_gt_pair(g) for g in gt] for gt in gts]

    images, all_iou, all_oir = [], [], []
    per_class = {f: {"n_gt": 0, "tp": 0, "iou": [], "oir": []} for f in FDI_CODES}
    total_tp = 0
    for k, (d, g) in enumerate(zip(preds, gts)):
        labels = None
        if label_volumes is not None:
            labels = np.asarray(label_volumes[k])
        matches = match_detections(d, g, iou_thresh)
        p, r = precision_recall(matches, len(g))
        tp = sum(1 for _, gi in matches if gi is not None)
        total_tp += tp
        for _, gi in matches:
            if gi is not None:
                per_class[g[gi][0]]["tp"] += 1
        best = {}
        for det in d:
            if det.fdi not in best or _rank_key(det) < _rank_key(best[det.fdi]):
                best[det.fdi] = det
        img_iou, img_oir, per_tooth = [], [], {}
        for fdi, gbox in g:
            per_class[fdi]["n_gt"] += 1
            det = best.get(fdi)
            if det is None:
                per_tooth[fdi] = None
                if not matched_only:
                    img_iou.append(0.0)
                    img_oir.append(0.0)
                    per_class[fdi]["iou"].append(0.0)
                    per_class[fdi]["oir"].append(0.0)
                continue
            v_iou = iou(det.bbox, gbox)
            if labels is not None:
                mask = labels == fdi_to_channel(fdi) + 1
            else:
                mask = None
            if mask is None or not mask.any():
                shape = labels.shape if labels is not None else None
                mask = _box_as_mask(gbox, shape)
            v_oir = oir(mask, det.bbox) if mask.any() else 0.0
            per_tooth[fdi] = (v_iou, v_oir)
            img_iou.append(v_iou)
            img_oir.append(v_oir)
            per_class[fdi]["iou"].append(v_iou)
            per_class[fdi]["oir"].append(v_oir)
        img_ap, _ = ap50([d], [g], iou_thresh)
        images.append(ImageResult(names[k], len(g), len(d), tp, len(d) - tp, len(g) - tp,
                                  p, r, img_ap, _mean(img_iou), _mean(img_oir), per_tooth))
        all_iou.extend(img_iou)
        all_oir.extend(img_oir)

    ap, curve = ap50(preds, gts, iou_thresh)
    n_det = sum(len(d) for d in preds)
    n_gt = sum(len(g) for g in gts)
    precision = total_tp / n_det if n_det else 1.0
    recall = total_tp / n_gt if n_gt else 1.0
    classes = {
        f: {"n_gt": c["n_gt"], "tp": c["tp"],
            "recall": c["tp"] / c["n_gt"] if c["n_gt"] else 0.0,
            "mean_iou": _mean(c["iou"]), "mean_oir": _mean(c["oir"])}
        for f, c in per_class.items()
    }
    return EvalReport(ap, _mean(all_iou), _mean(all_oir), precision, recall,
                      confusion_matrix(preds, gts, iou_thresh), curve, images, classes)


def _box_as_mask(box: BBox3, shape=None) -> np.ndarray:
    if shape is None:
        # a grid just large enough to hold the box
        (x0, y0, z0), (x1, y1, z1) = box.voxel_range()
        shape = (max(z1 + 1, 1), max(y1 + 1, 1), max(x1 + 1, 1))
    return box_voxel_mask(box, shape)


def evaluate(pred_files, gt_files, config=None) -> EvalReport:
    """File-based front end of :func:`evaluate_sets`.

    ``config`` keys: ``iou_thresh`` (0.5), ``matched_only`` (False),
    ``label_files`` (optional list of label volume paths).
    """
    config = dict(config or {})
    pred_files, gt_files = list(pred_files), list(gt_files)
    if len(pred_files) != len(gt_files):
        raise ValueError(f"{len(pred_files)} prediction files vs {len(gt_files)} ground-truth files")
    label_files = config.get("label_files")
    labels = [load_volume(p) for p in label_files] if label_files else None
    preds = [load_detections(p) for p in pred_files]
    gts = [load_detections(p) for p in gt_files]
    names = [Path(p).stem for p in gt_files]
    return evaluate_sets(preds, gts, labels, config.get("iou_thresh", 0.5),
                         config.get("matched_only", False), names)
