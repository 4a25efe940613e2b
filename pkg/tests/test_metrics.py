from fractions import Fraction

import numpy as np
import pytest

from oracles import brute_force_ap, random_ap_instance, voxel_iou, voxel_oir
from toothgd.anatomy import FDI_CODES
from toothgd.heatmap import Detection, assemble_bbox, save_detections
from toothgd.metrics import (ap50, confusion_matrix, evaluate, evaluate_sets, iou,
                             match_detections, oir, precision_recall)
from toothgd.volume import BBox3, Volume3, save_volume


def box(lo, hi):
    return BBox3(tuple(lo), tuple(hi))


def det_for(fdi, b, score=1.0):
    return Detection(fdi, b.center, b.extent, score)


def test_iou_examples():
    a = box((0, 0, 0), (10, 10, 10))
    assert iou(a, a) == 1
    assert iou(a, box((20, 0, 0), (30, 10, 10))) == 0
    assert iou(a, box((5, 0, 0), (15, 10, 10))) == pytest.approx(1 / 3)
    assert voxel_iou(((0, 0, 0), (10, 10, 10)), ((5, 0, 0), (15, 10, 10)), 16) == pytest.approx(1 / 3)
    flat = box((0, 0, 0), (0, 1, 1))
    assert iou(flat, flat) == 0


def test_iou_symmetric_bounded():
    rng = np.random.default_rng(0)
    for _ in range(100):
        lo = rng.integers(0, 10, (2, 3))
        hi = lo + rng.integers(1, 6, (2, 3))
        a, b = box(lo[0], hi[0]), box(lo[1], hi[1])
        v = iou(a, b)
        assert v == iou(b, a) and 0 <= v <= 1
        assert v == pytest.approx(voxel_iou((lo[0], hi[0]), (lo[1], hi[1]), 16), abs=1e-12)


def test_oir_examples():
    m = np.zeros((4, 4, 4), bool)
    m[1, 1, 1:3] = True
    assert oir(m, box((0, 0, 0), (3, 3, 3))) == 1
    assert oir(m, box((0.5, 0.5, 0.5), (1.5, 1.5, 1.5))) == 0.5
    assert oir(m, box((3, 3, 3), (4, 4, 4))) == 0
    with pytest.raises(ValueError):
        oir(np.zeros((2, 2, 2)), box((0, 0, 0), (1, 1, 1)))


def test_oir_matches_voxel_oracle(phantom):
    rng = np.random.default_rng(1)
    for t in phantom.teeth[:10]:
        lo = np.array(t.box.min) + rng.integers(-3, 4, 3)
        b = box(lo, lo + rng.integers(2, 20, 3))
        assert oir(phantom.mask(t.fdi), b) == pytest.approx(voxel_oir(phantom.mask(t.fdi), b), abs=1e-9)


def test_matching_rules():
    g = box((0, 0, 0), (10, 10, 10))
    gts = [(11, g)]
    perfect = match_detections([det_for(11, g)], gts)
    assert perfect[0][1] == 0
    two = match_detections([det_for(11, g, 0.6), det_for(11, g, 0.9)], gts)
    assert [m[0].score for m in two] == [0.9, 0.6]
    assert [m[1] for m in two] == [0, None]
    # IOU 0.4 at threshold 0.5 is a false positive
    shifted = box((0, 0, 0), (4, 10, 10))
    assert iou(shifted, g) == pytest.approx(0.4)
    assert match_detections([det_for(11, shifted)], gts)[0][1] is None
    assert match_detections([det_for(12, g)], gts)[0][1] is None
    with pytest.raises(ValueError):
        match_detections([], gts, 1.0)


def test_precision_recall_counts():
    assert precision_recall([("d", 0)], 1) == (1, 1)
    matches = [("a", 0), ("b", 1), ("c", 2), ("d", None)]
    assert precision_recall(matches, 4) == (0.75, 0.75)
    assert precision_recall([], 3) == (1, 0)
    assert precision_recall([], 0) == (1, 1)


def test_ap_examples():
    g1, g2 = box((0, 0, 0), (4, 4, 4)), box((10, 10, 10), (14, 14, 14))
    gts = [(11, g1), (12, g2)]
    assert ap50([det_for(11, g1), det_for(12, g2)], gts)[0] == 1
    dets = [det_for(11, g1, 0.9), det_for(13, g1, 0.8), det_for(12, g2, 0.7)]
    ap, curve = ap50(dets, gts)
    assert ap == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert curve.precision == pytest.approx([1, 0.5, 2 / 3])
    assert curve.recall == pytest.approx([0.5, 0.5, 1.0])
    assert ap50([], gts)[0] == 0


def test_ap_equals_oracle():
    rng = np.random.default_rng(7)
    for _ in range(30):
        raw, gts, dets = random_ap_instance(rng, 60)
        gt_boxes = [[(f, box(lo, hi)) for f, (lo, hi) in g] for g in gts]
        got, _ = ap50(dets, gt_boxes)
        assert got == float(brute_force_ap(raw, gts))


def test_confusion_matrix():
    boxes = [box((10 * k, 0, 0), (10 * k + 5, 5, 5)) for k in range(3)]
    gts = [(11, boxes[0]), (12, boxes[1]), (13, boxes[2])]
    perfect = confusion_matrix([det_for(f, b) for f, b in gts], gts)
    m = perfect.matrix
    assert m[0, 0] == m[1, 1] == m[2, 2] == 1 and m.sum() == 3
    swapped = confusion_matrix([det_for(12, boxes[0]), det_for(12, boxes[1])], gts)
    assert swapped.matrix[0, 1] == 1 and swapped.matrix[0, 0] == 0
    assert swapped.matrix[2].sum() == 0  # undetected mass is dropped
    assert not swapped.matrix[5].any()  # absent class


def test_confusion_identity_full_set(phantom):
    cm = confusion_matrix(phantom.gt_detections(), phantom.gt_pairs())
    assert np.array_equal(cm.matrix, np.eye(32))


def test_evaluate_perfect_and_shrunk(phantom):
    rep = evaluate_sets([phantom.gt_detections()], [phantom.gt_pairs()], [phantom.labels])
    assert (rep.ap50, rep.mean_iou, rep.mean_oir) == (1, 1, 1)
    shrunk = [Detection(t.fdi, t.box.center, [e / 2 for e in t.box.extent]) for t in phantom.teeth]
    rep = evaluate_sets([shrunk], [phantom.gt_pairs()], iou_thresh=0.1)
    assert rep.mean_iou == pytest.approx(0.125)
    assert rep.recall == 1
    rep = evaluate_sets([[]], [phantom.gt_pairs()])
    assert rep.ap50 == 0 and rep.recall == 0


def test_evaluate_missing_counts_zero_or_skipped(phantom):
    dets = phantom.gt_detections()[:16]
    rep = evaluate_sets([dets], [phantom.gt_pairs()])
    assert rep.mean_iou == pytest.approx(0.5)
    rep = evaluate_sets([dets], [phantom.gt_pairs()], matched_only=True)
    assert rep.mean_iou == 1


def test_evaluate_files(tmp_path, phantom):
    save_detections(phantom.gt_detections(), tmp_path / "gt.json")
    save_detections(phantom.gt_detections()[::2], tmp_path / "pred.json")
    save_volume(Volume3(phantom.labels), tmp_path / "labels")
    rep = evaluate([tmp_path / "pred.json"], [tmp_path / "gt.json"],
                   {"label_files": [tmp_path / "labels"]})
    assert rep.recall == 0.5 and rep.precision == 1
    rep.write(tmp_path / "out", svg=True)
    for name in ("report.csv", "pr_curve.csv", "per_class.csv", "confusion.csv", "pr_curve.svg"):
        assert (tmp_path / "out" / name).exists()
    lines = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert lines[0].startswith("image,") and lines[-1].startswith("ALL,")
    with pytest.raises(ValueError):
        evaluate([tmp_path / "pred.json"], [])
