"""Dense 3D grids, axis-aligned boxes and the raw + JSON sidecar file format.

Arrays are held in ``(nz, ny, nx)`` C order so that a flat C-order walk is the
x-fastest raster order ``x + nx * (y + ny * z)``. All geometry (box corners,
centers, dims tuples) is expressed as ``(x, y, z)``. Voxel ``i`` has its center
at continuous coordinate ``i`` and covers ``[i - 0.5, i + 0.5]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_positive_triple, check_volume_array

DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "u16": np.dtype("<u2")}
_TAGS = {np.dtype(v).newbyteorder("="): k for k, v in DTYPES.items()}


def dtype_tag(dtype) -> str:
    dt = np.dtype(dtype).newbyteorder("=")
    if dt not in _TAGS:
        raise ValueError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    return _TAGS[dt]


@dataclass(frozen=True, eq=False)
class Volume3:
    """A scalar grid with voxel spacing.

    ``data`` has shape ``(nz, ny, nx)``; ``dims`` reports ``(nx, ny, nz)``.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = check_volume_array(self.data)
        dtype_tag(data.dtype)
        object.__setattr__(self, "data", data)
        sp = tuple(float(s) for s in self.spacing)
        check_positive_triple(sp, "spacing")
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def dtype_tag(self) -> str:
        return dtype_tag(self.data.dtype)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Volume3):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def raster_index(self, x: int, y: int, z: int) -> int:
        return raster_index((x, y, z), self.dims)


def raster_index(voxel, dims) -> int:
    x, y, z = (int(v) for v in voxel)
    nx, ny, nz = dims
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise IndexError(f"voxel {voxel} outside dims {dims}")
    return x + nx * (y + ny * z)


def raster_voxel(index: int, dims) -> tuple:
    nx, ny, nz = dims
    if not 0 <= index < nx * ny * nz:
        raise IndexError(f"raster index {index} outside dims {dims}")
    x = index % nx
    y = (index // nx) % ny
    z = index // (nx * ny)
    return (x, y, z)


@dataclass(frozen=True)
class BBox3:
    """Axis-aligned box in continuous voxel coordinates, ``(x, y, z)`` corners."""

    min: tuple
    max: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ValueError("box corners must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> tuple:
        return tuple(b - a for a, b in zip(self.min, self.max))

    @property
    def center(self) -> tuple:
        return tuple((a + b) / 2 for a, b in zip(self.min, self.max))

    @property
    def volume(self) -> float:
        w, h, d = self.extent
        return w * h * d

    @classmethod
    def from_voxel_range(cls, lo, hi) -> "BBox3":
        """Tight box around the voxels ``lo..hi`` (inclusive)."""
        return cls(tuple(v - 0.5 for v in lo), tuple(v + 0.5 for v in hi))

    @classmethod
    def full_extent(cls, dims) -> "BBox3":
        return cls((-0.5,) * 3, tuple(n - 0.5 for n in dims))

    def voxel_range(self, dims=None) -> tuple:
        """Inclusive integer index range of voxel centers inside the box.

        Returns ``(lo, hi)`` per axis; an axis with no center inside has
        ``lo > hi``. With ``dims`` the range is clipped to the grid.
        """
        lo = [math.ceil(v) for v in self.min]
        hi = [math.floor(v) for v in self.max]
        if dims is not None:
            lo = [max(a, 0) for a in lo]
            hi = [min(b, n - 1) for b, n in zip(hi, dims)]
        return tuple(lo), tuple(hi)

    def to_json(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}


def bbox_of_mask(mask) -> BBox3:
    """Tight box of the nonzero voxels of a ``(nz, ny, nx)`` array."""
    idx = np.nonzero(np.asarray(mask))
    if idx[0].size == 0:
        raise ValueError("empty mask has no bounding box")
    z, y, x = idx
    return BBox3.from_voxel_range(
        (x.min(), y.min(), z.min()), (x.max(), y.max(), z.max())
    )


def _paths(path) -> tuple:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def save_volume(v: Volume3, path) -> None:
    """Write ``<name>.json`` and ``<name>.raw`` (little-endian, x-fastest)."""
    header_path, raw_path = _paths(path)
    tag = v.dtype_tag
    header = {
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "dtype": tag,
        "order": "x-fastest",
    }
    payload = np.ascontiguousarray(v.data, dtype=DTYPES[tag]).tobytes()
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(payload)
    header_path.write_text(json.dumps(header, indent=2) + "\n")


def load_volume(path) -> Volume3:
    header_path, raw_path = _paths(path)
    header = json.loads(header_path.read_text())
    try:
        dims = [int(n) for n in header["dims"]]
        tag = header["dtype"]
    except KeyError as exc:
        raise ValueError(f"{header_path}: header missing {exc}") from None
    if tag not in DTYPES:
        raise ValueError(f"{header_path}: unknown dtype tag {tag!r}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise ValueError(f"{header_path}: unsupported raster order {header['order']!r}")
    check_positive_triple(dims, "dims")
    spacing = header.get("spacing", [1.0, 1.0, 1.0])
    payload = raw_path.read_bytes()
    dt = DTYPES[tag]
    expected = dims[0] * dims[1] * dims[2] * dt.itemsize
    if len(payload) != expected:
        raise ValueError(
            f"{raw_path}: payload has {len(payload)} bytes, header implies {expected}"
        )
    nx, ny, nz = dims
    data = np.frombuffer(payload, dtype=dt).reshape(nz, ny, nx)
    return Volume3(data.astype(dt.newbyteorder("="), copy=True), tuple(spacing))


def _sample_positions(lo: float, hi: float, n: int) -> np.ndarray:
    step = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * step


def _nearest_index(pos: np.ndarray, center: float) -> np.ndarray:
    # halves round away from the box center
    frac = pos - np.floor(pos)
    down = np.floor(pos)
    up = down + 1
    idx = np.where(frac > 0.5, up, down)
    tie = frac == 0.5
    idx = np.where(tie & (pos >= center), up, idx)
    idx = np.where(tie & (pos < center), down, idx)
    return idx.astype(np.int64)


def crop_resize(v, box: BBox3, out_dims, mode: str = "nearest") -> Volume3:
    """Resample ``v`` over ``box`` onto an ``out_dims`` grid.

    Output voxel ``j`` along an axis samples the box at
    ``min + (j + 0.5) * extent / n``. Samples outside the volume extent
    ``[-0.5, n - 0.5]`` are 0; inside it the edge voxels extend to the
    border. ``mode`` is ``"nearest"`` (labels) or ``"trilinear"``.
    """
    if not isinstance(v, Volume3):
        v = Volume3(np.asarray(v))
    out_dims = tuple(int(n) for n in out_dims)
    check_positive_triple(out_dims, "out_dims")
    if mode not in ("nearest", "trilinear"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    dims = v.dims
    full = BBox3.full_extent(dims)
    for a in range(3):
        if box.max[a] < full.min[a] or box.min[a] > full.max[a]:
            raise ValueError(f"box {box} does not intersect volume extent {dims}")

    positions = [_sample_positions(box.min[a], box.max[a], out_dims[a]) for a in range(3)]
    inside = [(p >= -0.5) & (p <= n - 0.5) for p, n in zip(positions, dims)]
    data = v.data
    if mode == "nearest":
        centers = box.center
        idx = [
            np.clip(_nearest_index(p, c), 0, n - 1)
            for p, c, n in zip(positions, centers, dims)
        ]
        out = data[np.ix_(idx[2], idx[1], idx[0])]
        out_dtype = data.dtype
    else:
        out = _trilinear(data.astype(np.float64), positions, dims)
        out_dtype = np.float32 if data.dtype != np.float32 else data.dtype
    mask = inside[2][:, None, None] & inside[1][None, :, None] & inside[0][None, None, :]
    out = np.where(mask, out, 0).astype(out_dtype)
    spacing = tuple(
        s * e / n if e > 0 else s for s, e, n in zip(v.spacing, box.extent, out_dims)
    )
    return Volume3(out, spacing)


def _trilinear(data: np.ndarray, positions, dims) -> np.ndarray:
    lows, highs, weights = [], [], []
    for p, n in zip(positions, dims):
        q = np.clip(p, 0, n - 1)
        i0 = np.floor(q).astype(np.int64)
        i1 = np.minimum(i0 + 1, n - 1)
        lows.append(i0)
        highs.append(i1)
        weights.append(q - i0)
    (x0, y0, z0), (x1, y1, z1), (wx, wy, wz) = lows, highs, weights
    out = np.zeros((len(z0), len(y0), len(x0)))
    for zi, zw in ((z0, 1 - wz), (z1, wz)):
        for yi, yw in ((y0, 1 - wy), (y1, wy)):
            for xi, xw in ((x0, 1 - wx), (x1, wx)):
                w = zw[:, None, None] * yw[None, :, None] * xw[None, None, :]
                out += w * data[np.ix_(zi, yi, xi)]
    return out


def normalize(v) -> Volume3:
    """Min-max scale to ``[0, 1]``; a constant volume maps to zeros."""
    if not isinstance(v, Volume3):
        v = Volume3(np.asarray(v))
    data = v.data.astype(np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        out = np.zeros_like(data)
    else:
        out = (data - lo) / (hi - lo)
    return Volume3(out.astype(np.float32), v.spacing)
