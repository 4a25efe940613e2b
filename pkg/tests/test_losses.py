import math

import numpy as np
import pytest

from toothgd.anatomy import AdjacencySet, default_adjacency
from toothgd.gradcheck import check_gradient
from toothgd.losses import (FocalParams, LossWeights, bbox_mse, distance_mse, focal_loss,
                            gd_loss, intermediate_loss, total_loss)


def test_defaults_match_published_settings():
    p, w = FocalParams(), LossWeights()
    assert (p.alpha, p.beta) == (2.0, 4.0)
    assert (w.lambda_heat, w.lambda_bbox, w.lambda_gd) == (0.1, 0.1, 1.0)


def test_param_validation():
    with pytest.raises(ValueError):
        FocalParams(alpha=-1)
    with pytest.raises(ValueError):
        FocalParams(clamp_eps=0.5)
    with pytest.raises(ValueError):
        LossWeights(lambda_gd=-0.1)


def test_focal_single_peak_pixel():
    v, _ = focal_loss(np.array([0.5]), np.array([1.0]))
    assert v == pytest.approx(-(0.5**2) * math.log(0.5), rel=1e-12)
    assert v == pytest.approx(0.173287, abs=1e-6)


def test_focal_two_pixels():
    v, _ = focal_loss(np.array([0.8, 0.1]), np.array([1.0, 0.5]))
    expected = -((0.2**2) * math.log(0.8) + (0.5**4) * (0.1**2) * math.log(0.9))
    assert v == pytest.approx(expected, rel=1e-12)
    assert v == pytest.approx(0.0089916, abs=1e-7)


def test_focal_ideal_prediction_near_zero():
    y = np.zeros((2, 6, 6, 6))
    y[0, 1, 2, 3] = y[1, 4, 4, 4] = 1.0
    y[0, 1, 2, 4] = 0.7
    v, _ = focal_loss((y == 1).astype(float), y)
    assert 0 <= v <= 1e-4


def test_focal_peak_count_floor():
    v, _ = focal_loss(np.array([0.5, 0.5]), np.array([0.0, 0.2]))
    expected = -(0.25 * math.log(0.5) + 0.8**4 * 0.25 * math.log(0.5))
    assert v == pytest.approx(expected, rel=1e-12)


def test_focal_clamp_zero_gradient():
    _, g = focal_loss(np.array([0.0, 1.0, 0.5]), np.array([1.0, 0.0, 0.0]))
    assert g[0] == 0 and g[1] == 0 and g[2] != 0


def test_focal_dim_mismatch():
    with pytest.raises(ValueError):
        focal_loss(np.zeros(3), np.zeros(4))


def test_focal_pixelwise_minimiser():
    eps = FocalParams().clamp_eps
    grid = np.concatenate([[eps], np.linspace(0.001, 0.999, 999), [1 - eps]])
    for yv in (1.0, 0.0, 0.3, 0.99):
        vals = [focal_loss(np.array([x]), np.array([yv]))[0] for x in grid]
        best = grid[int(np.argmin(vals))]
        assert best == (1 - eps if yv == 1.0 else eps)


def test_focal_dtype_preserved():
    x = np.full((2, 2, 2), 0.3, np.float32)
    _, g = focal_loss(x, np.zeros_like(x))
    assert g.dtype == np.float32


def test_intermediate_loss():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 0.9, (4, 4, 4))
    y[1, 1, 1] = 1
    a, b = rng.uniform(0.05, 0.95, (2, 4, 4, 4))
    fa, _ = focal_loss(a, y)
    fb, gb = focal_loss(b, y)
    assert intermediate_loss([a], y, [1])[0] == fa
    assert intermediate_loss([a, a], y, [1, 1])[0] == pytest.approx(2 * fa, rel=1e-15)
    v, grads = intermediate_loss([a, b], y, [0, 1])
    assert v == fb and not grads[0].any() and np.array_equal(grads[1], gb)
    with pytest.raises(ValueError):
        intermediate_loss([a, b], y, [1])
    with pytest.raises(ValueError):
        intermediate_loss([a], y, [-1])


def test_bbox_mse():
    assert bbox_mse([(3, 4, 5)], [(3, 4, 5)])[0] == 0
    v, g = bbox_mse([(2, 2, 2)], [(0, 0, 0)])
    assert v == 4 and np.allclose(g, 4 / 3)
    with pytest.raises(ValueError):
        bbox_mse([(1, 1, 1)], [(1, 1, 1), (2, 2, 2)])


def test_bbox_mse_mapping_excludes_absent():
    v, g = bbox_mse({11: (2, 2, 2), 12: (9, 9, 9)}, {11: (0, 0, 0)})
    assert v == 4 and set(g) == {11}
    with pytest.raises(ValueError):
        bbox_mse({11: (1, 1, 1)}, {12: (1, 1, 1)})


def test_bbox_mse_gradient():
    rng = np.random.default_rng(1)
    y = rng.uniform(5, 20, (6, 3))
    x = y + rng.normal(0, 1, y.shape)
    err = check_gradient(x, lambda v: bbox_mse(v, y), range(18))
    assert err <= 1e-6


def _two_channel(values_a, values_b):
    x = np.zeros((2, 3, 3, 3))
    for (i, v) in values_a:
        x[0].flat[i] = v
    for (i, v) in values_b:
        x[1].flat[i] = v
    return x


def test_gd_loss_examples():
    adj = default_adjacency()
    x = _two_channel([(0, 0.9)], [(5, 0.7)])
    assert gd_loss(x, adj, (11, 21))[0] == 0
    x = _two_channel([(4, 0.5)], [(4, 0.5)])
    assert gd_loss(x, adj, (11, 21))[0] == 0.25
    assert gd_loss(x, adj, (11, 23))[0] == 0  # not adjacent


def test_gd_gradient_formula():
    rng = np.random.default_rng(2)
    channels = (12, 11, 21)
    x = rng.uniform(0, 1, (3, 4, 4, 4))
    v, g = gd_loss(x, default_adjacency(), channels)
    assert v == pytest.approx((x[0] * x[1]).sum() + (x[1] * x[2]).sum(), rel=1e-14)
    assert np.allclose(g[0], x[1]) and np.allclose(g[1], x[0] + x[2]) and np.allclose(g[2], x[1])


def test_gd_symmetric_under_swap():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (2, 4, 4, 4))
    adj = AdjacencySet([(11, 21)])
    assert gd_loss(x, adj, (11, 21))[0] == gd_loss(x[::-1].copy(), adj, (11, 21))[0]


def test_total_loss_zero_weights_and_isolation():
    rng = np.random.default_rng(4)
    y = rng.uniform(0, 0.9, (32, 3, 3, 3))
    y[0, 1, 1, 1] = 1
    x = rng.uniform(0.05, 0.95, y.shape)
    boxes_x, boxes_y = rng.uniform(5, 10, (2, 32, 3))
    v, _ = total_loss([x], y, boxes_x, boxes_y, LossWeights(0, 0, 0))
    assert v == 0
    v, _ = total_loss([x], y, boxes_x, boxes_y, LossWeights(1, 0, 0))
    assert v == focal_loss(x, y)[0]


def test_total_loss_recomposition():
    rng = np.random.default_rng(5)
    y = rng.uniform(0, 0.9, (32, 3, 3, 3))
    y[3, 0, 1, 2] = 1
    s1, s2 = rng.uniform(0.05, 0.95, (2,) + y.shape)
    bx, by = rng.uniform(5, 10, (2, 32, 3))
    v, g = total_loss([s1, s2], y, bx, by)
    heat = focal_loss(s1, y)[0] + focal_loss(s2, y)[0]
    box = ((bx - by) ** 2).mean()
    gd = gd_loss(s2)[0]
    assert v == pytest.approx(0.1 * heat + 0.1 * box + 1.0 * gd, rel=1e-12)
    assert np.allclose(g["stacks"][1], 0.1 * focal_loss(s2, y)[1] + gd_loss(s2)[1])
    v_all, _ = total_loss([s1, s2], y, bx, by, gd_on="all")
    assert v_all == pytest.approx(v + gd_loss(s1)[0], rel=1e-12)
    with pytest.raises(ValueError):
        total_loss([s1], y, bx, by, gd_on="first")


def test_distance_mse():
    assert distance_mse(np.ones(4), np.ones(4))[0] == 0
    v, g = distance_mse(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    assert v == 5 and list(g) == [2, -4]
    v, _ = distance_mse(np.array([1.0, 0.0]), np.array([0.0, 2.0]), reduction="mean")
    assert v == 2.5
    with pytest.raises(ValueError):
        distance_mse(np.zeros(2), np.zeros(3))


def test_distance_mse_gradient():
    rng = np.random.default_rng(6)
    y = rng.uniform(0, 5, (4, 4, 4))
    x = y + rng.normal(0, 1, y.shape)
    assert check_gradient(x, lambda v: distance_mse(v, y), range(64)) <= 1e-6


def test_values_finite_nonnegative_and_reproducible():
    rng = np.random.default_rng(7)
    y = rng.uniform(0, 1, (32, 4, 4, 4))
    x = rng.uniform(0, 1, y.shape)
    x[0, 0, 0, 0], x[0, 0, 0, 1] = 0.0, 1.0
    for fn in (lambda: focal_loss(x, y), lambda: gd_loss(x)):
        a, b = fn(), fn()
        assert math.isfinite(a[0]) and a[0] >= 0
        assert a[0] == b[0] and np.array_equal(a[1], b[1])
