import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from toothgd.distmap import chamfer_edt, exact_edt_bruteforce
from toothgd.heatmap import assemble_bbox, expand_box
from toothgd.losses import focal_loss, gd_loss
from toothgd.metrics import iou, oir
from toothgd.volume import BBox3, Volume3, load_volume, raster_index, raster_voxel, save_volume

dims3 = st.tuples(*(st.integers(1, 9) for _ in range(3)))
coord = st.floats(-50, 50, allow_nan=False)
size = st.floats(0.5, 30, allow_nan=False)


@given(dims3, st.data())
def test_raster_round_trip(dims, data):
    i = data.draw(st.integers(0, dims[0] * dims[1] * dims[2] - 1))
    assert raster_index(raster_voxel(i, dims), dims) == i


@given(st.tuples(coord, coord, coord), st.tuples(size, size, size))
def test_assemble_center_extent(center, dims):
    b = assemble_bbox(center, dims)
    assert np.allclose(b.center, center) and np.allclose(b.extent, dims)


@given(st.tuples(coord, coord, coord), st.tuples(size, size, size),
       st.tuples(coord, coord, coord), st.tuples(size, size, size))
def test_iou_properties(c1, d1, c2, d2):
    a, b = assemble_bbox(c1, d1), assemble_bbox(c2, d2)
    v = iou(a, b)
    assert 0 <= v <= 1 + 1e-12
    assert v == iou(b, a)
    assert abs(iou(a, a) - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(2, 7), st.integers(2, 7), st.integers(2, 7))))
def test_chamfer_sandwich(mask):
    c, e = chamfer_edt(mask), exact_edt_bruteforce(mask)
    if mask.all():
        assert np.array_equal(c, e)
        return
    assert np.all(e <= c + 1e-12)
    assert np.all(c <= 1.129 * e + 1e-6)
    assert np.all((c > 0) == mask)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_save_load_bit_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("v") / "vol"
    v = Volume3(data)
    save_volume(v, path)
    assert load_volume(path).data.tobytes() == data.tobytes()


@settings(max_examples=30, deadline=None)
@given(arrays(bool, (4, 4, 4)).filter(lambda m: m.any()), st.lists(st.floats(0, 5), min_size=2, max_size=5))
def test_oir_monotone(mask, margins):
    box = BBox3((1.2, 1.2, 1.2), (2.2, 2.2, 2.2))
    vals = [oir(mask, expand_box(box, m)) for m in sorted(margins)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


@given(arrays(np.float64, (2, 3, 3, 3), elements=st.floats(0, 1)),
       arrays(np.float64, (2, 3, 3, 3), elements=st.floats(0, 1)))
def test_losses_finite_non_negative(x, y):
    fv, _ = focal_loss(x, y)
    gv, _ = gd_loss(x, channels=(11, 21))
    assert np.isfinite(fv) and fv >= 0
    assert np.isfinite(gv) and gv >= 0
