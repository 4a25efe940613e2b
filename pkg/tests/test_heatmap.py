import math

import numpy as np
import pytest

from toothgd.anatomy import FDI_CODES
from toothgd.heatmap import (Detection, GaussianSpec, HeatmapEncoder, PeakDetector,
                             assemble_bbox, decode_peaks, encode_ground_truth, expand_box,
                             load_detections, render_gaussian, save_detections)
from toothgd.metrics import oir
from toothgd.volume import BBox3


def test_integer_center_peak_is_one():
    g = render_gaussian((9, 9, 9), GaussianSpec((4, 3, 5), (1.3, 2.0, 0.7)))
    assert g[5, 3, 4] == 1.0
    assert g.max() == 1.0 and g.dtype == np.float32


def test_offset_value():
    g = render_gaussian((16, 16, 16), GaussianSpec((8, 8, 8), (2, 2, 2)), dtype=np.float64)
    assert g[8, 8, 10] == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert g[8, 8, 10] == pytest.approx(0.60653, abs=1e-5)


def test_truncation():
    g = render_gaussian((64, 8, 8), GaussianSpec((2, 4, 4), (2, 2, 2)))
    assert g[4, 4, 22] == 0.0  # 10 sigma
    assert np.all((g == 0) | (g >= 1e-4))


def test_formula_matches_dense_evaluation():
    spec = GaussianSpec((3.5, 4.0, 2.25), (1.5, 2.5, 1.0))
    g = render_gaussian((8, 9, 6), spec, dtype=np.float64)
    z, y, x = np.meshgrid(np.arange(6), np.arange(9), np.arange(8), indexing="ij")
    dense = np.exp(-((x - 3.5) ** 2 / 4.5 + (y - 4.0) ** 2 / 12.5 + (z - 2.25) ** 2 / 2.0))
    dense[dense < 1e-4] = 0
    assert np.allclose(g, dense, rtol=0, atol=1e-15)


def test_center_outside_extent():
    with pytest.raises(ValueError):
        render_gaussian((4, 4, 4), GaussianSpec((5, 1, 1), (1, 1, 1)))
    with pytest.raises(ValueError):
        GaussianSpec((1, 1, 1), (1, 0, 1))


def test_encode_empty_and_single():
    assert not encode_ground_truth([], (8, 8, 8)).any()
    box = BBox3((10, 10, 10), (22, 22, 22))
    stack = encode_ground_truth([(11, box)], (32, 32, 32))
    assert stack.shape == (32, 32, 32, 32)
    ch = stack[0]
    assert ch[16, 16, 16] == 1.0
    # sigma = 12 / 6 = 2 per axis
    assert ch[16, 16, 18] == pytest.approx(math.exp(-0.5), rel=1e-6)
    assert not stack[1:].any()


def test_encode_errors():
    box = BBox3((1, 1, 1), (3, 3, 3))
    with pytest.raises(ValueError):
        encode_ground_truth([(11, box), (11, box)], (8, 8, 8))
    with pytest.raises(ValueError):
        encode_ground_truth([(11, BBox3((5, 5, 5), (9, 9, 9)))], (8, 8, 8))


def test_isotropic_sigma():
    box = BBox3((0, 0, 0), (12, 6, 6))
    stack = encode_ground_truth([(11, box)], (13, 7, 7), isotropic=True, channels=(11,))
    # sigma = 2 on every axis
    assert stack[0, 3, 3, 8] == pytest.approx(math.exp(-0.5), rel=1e-6)
    assert stack[0, 3, 5, 6] == pytest.approx(math.exp(-0.5), rel=1e-6)


def test_decode_basics():
    assert decode_peaks(np.zeros((32, 4, 4, 4), np.float32), 0.1) == []
    s = np.zeros((1, 8, 8, 8), np.float32)
    s[0, 5, 4, 3] = 0.9
    assert decode_peaks(s, 0.5, channels=(21,)) == [(21, (3, 4, 5), pytest.approx(0.9))]
    s[0, 1, 1, 1] = 0.9
    assert decode_peaks(s, 0.5, channels=(21,))[0][1] == (1, 1, 1)


def test_decode_threshold_range():
    with pytest.raises(ValueError):
        decode_peaks(np.zeros((32, 2, 2, 2)), 1.5)


def test_encode_decode_round_trip(phantoms):
    for truth in phantoms:
        stack = encode_ground_truth(truth.gt_pairs(), truth.spec.dims)
        peaks = decode_peaks(stack, 0.0)
        assert [p[0] for p in peaks] == list(FDI_CODES)
        for (fdi, voxel, score), t in zip(peaks, truth.teeth):
            assert voxel == t.center and score == 1.0


def test_assemble_bbox():
    b = assemble_bbox((64, 64, 64), (20, 30, 40))
    assert b.min == (54, 49, 44) and b.max == (74, 79, 84)
    b = assemble_bbox((1, 1, 1), (4, 4, 4))
    assert b.min == (-1, -1, -1) and b.max == (3, 3, 3)
    with pytest.raises(ValueError):
        assemble_bbox((1, 1, 1), (0, 1, 1))


def test_assemble_center_and_extent():
    rng = np.random.default_rng(3)
    for _ in range(50):
        c = rng.uniform(-10, 100, 3)
        d = rng.uniform(0.5, 40, 3)
        b = assemble_bbox(c, d)
        assert np.allclose(b.center, c) and np.allclose(b.extent, d)


def test_expand_box():
    b = BBox3((0, 0, 0), (1, 1, 1))
    assert expand_box(b, 0) == b
    assert expand_box(b, 5).extent == (11, 11, 11)
    with pytest.raises(ValueError):
        expand_box(b, -1)


def test_oir_monotone_in_margin(phantom):
    t = phantom.teeth[3]
    shrunk = assemble_bbox(t.center, [e / 2 for e in t.box.extent])
    vals = [oir(phantom.mask(t.fdi), expand_box(shrunk, m)) for m in range(0, 12)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 1.0


def test_detection_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        Detection(11, (0, 0, 0), (1, 1, 1), 1.5)
    with pytest.raises(ValueError):
        Detection(19, (0, 0, 0), (1, 1, 1))
    dets = [Detection(11, (1, 2, 3), (4, 5, 6), 0.5), Detection(48, (1.5, 2, 3), (4, 5, 6.25), 1)]
    save_detections(dets, tmp_path / "d.json")
    assert load_detections(tmp_path / "d.json") == dets


def test_estimators(phantom):
    enc = HeatmapEncoder(dims=phantom.spec.dims)
    assert enc.get_params()["sigma_scale"] == pytest.approx(1 / 6)
    stack = enc.fit_transform(phantom.gt_pairs())
    assert enc.n_channels_ == 32
    sizes = {t.fdi: t.dims for t in phantom.teeth}
    dets = PeakDetector().fit(box_dims=sizes).predict(stack)
    assert [d.bbox for d in dets] == [t.box for t in phantom.teeth]
