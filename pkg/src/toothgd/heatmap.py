"""Ground-truth heatmap rendering, peak decoding and box assembly."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_non_negative, check_positive_triple, check_stack
from .anatomy import FDI_CODES, check_fdi
from .volume import BBox3, raster_voxel

TRUNCATE = 1e-4
SIGMA_SCALE = 1.0 / 6.0


@dataclass(frozen=True)
class GaussianSpec:
    center: tuple
    sigma: tuple
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        check_positive_triple(self.sigma, "sigma")
        if len(self.center) != 3:
            raise ValueError("center must have 3 components")


@dataclass(frozen=True)
class Detection:
    """One detected tooth: FDI code, center ``(x, y, z)``, box dims ``(W, H, D)``."""

    fdi: int
    center: tuple
    dims: tuple
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "fdi", check_fdi(self.fdi))
        object.__setattr__(self, "center", tuple(_plain(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(_plain(d) for d in self.dims))
        if len(self.center) != 3:
            raise ValueError("center must have 3 components")
        check_positive_triple(self.dims, "box dims")
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {score}")
        object.__setattr__(self, "score", score)

    @property
    def bbox(self) -> BBox3:
        return assemble_bbox(self.center, self.dims)

    def to_json(self) -> dict:
        return {
            "fdi": self.fdi,
            "center": list(self.center),
            "dims": list(self.dims),
            "score": self.score,
        }

    @classmethod
    def from_json(cls, obj) -> "Detection":
        try:
            return cls(obj["fdi"], obj["center"], obj["dims"], obj.get("score", 1.0))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed detection record {obj!r}") from exc


def _plain(v):
    # keep integral coordinates as ints so JSON output stays tidy
    f = float(v)
    return int(f) if f.is_integer() else f


def save_detections(dets, path) -> None:
    Path(path).write_text(json.dumps([d.to_json() for d in dets], indent=2) + "\n")


def load_detections(path) -> list:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: detections file must be a JSON array")
    return [Detection.from_json(o) for o in data]


def _check_center(center, dims):
    for c, n in zip(center, dims):
        if not -0.5 <= c <= n - 0.5:
            raise ValueError(f"center {center} outside volume extent {dims}")


def render_gaussian(dims, spec: GaussianSpec, truncate: float = TRUNCATE,
                    dtype=np.float32) -> np.ndarray:
    """Unit-amplitude anisotropic Gaussian on a ``(nz, ny, nx)`` grid.

    Values below ``truncate`` are set to exactly zero.
    """
    dims = tuple(int(n) for n in dims)
    check_positive_triple(dims, "dims")
    _check_center(spec.center, dims)
    out = np.zeros(dims[::-1], dtype=dtype)
    # beyond this radius the single-axis factor is already under the cutoff
    reach = math.sqrt(2.0 * math.log(1.0 / truncate)) if truncate > 0 else math.inf
    slices, axes = [], []
    for c, s, n in zip(spec.center, spec.sigma, dims):
        lo = max(0, math.floor(c - reach * s))
        hi = min(n - 1, math.ceil(c + reach * s))
        coords = np.arange(lo, hi + 1, dtype=np.float64)
        axes.append(-((coords - c) ** 2) / (2.0 * s * s))
        slices.append(slice(lo, hi + 1))
    ex, ey, ez = axes
    values = spec.amplitude * np.exp(ez[:, None, None] + ey[None, :, None] + ex[None, None, :])
    values[values < truncate] = 0.0
    out[slices[2], slices[1], slices[0]] = values
    return out


def tooth_sigma(box: BBox3, sigma_scale: float = SIGMA_SCALE, isotropic: bool = False) -> tuple:
    extent = box.extent
    if isotropic:
        return (sigma_scale * max(extent),) * 3
    return tuple(sigma_scale * e for e in extent)


def encode_ground_truth(teeth, dims, sigma_scale: float = SIGMA_SCALE,
                        isotropic: bool = False, channels=FDI_CODES,
                        truncate: float = TRUNCATE) -> np.ndarray:
    """Render one Gaussian per tooth into a ``(C, nz, ny, nx)`` stack.

    ``teeth`` is a sequence of ``(fdi, BBox3)``. Each Gaussian sits at the box
    center with ``sigma = sigma_scale * extent`` per axis. Channels of absent
    teeth stay zero.
    """
    dims = tuple(int(n) for n in dims)
    index = {check_fdi(t): k for k, t in enumerate(channels)}
    stack = np.zeros((len(index),) + dims[::-1], dtype=np.float32)
    seen = set()
    for fdi, box in teeth:
        fdi = check_fdi(fdi)
        if fdi in seen:
            raise ValueError(f"tooth {fdi} appears more than once")
        seen.add(fdi)
        if fdi not in index:
            raise ValueError(f"tooth {fdi} has no channel in this stack")
        full = BBox3.full_extent(dims)
        if any(a < lo or b > hi for a, b, lo, hi in zip(box.min, box.max, full.min, full.max)):
            raise ValueError(f"box of tooth {fdi} lies outside the volume extent {dims}")
        spec = GaussianSpec(box.center, tooth_sigma(box, sigma_scale, isotropic))
        stack[index[fdi]] = render_gaussian(dims, spec, truncate)
    return stack


def decode_peaks(stack, score_threshold: float = 0.0, channels=FDI_CODES) -> list:
    """Global argmax per channel as ``(fdi, (x, y, z), score)``.

    Ties go to the lowest raster index. Channels whose peak is below
    ``score_threshold`` are omitted.
    """
    stack = check_stack(stack, len(channels))
    score_threshold = float(score_threshold)
    if not 0.0 <= score_threshold <= 1.0:
        raise ValueError(f"score_threshold must lie in [0, 1], got {score_threshold}")
    nz, ny, nx = stack.shape[1:]
    flat = stack.reshape(stack.shape[0], -1)
    idx = np.argmax(flat, axis=1)
    peaks = []
    for ch, (fdi, i) in enumerate(zip(channels, idx)):
        score = float(flat[ch, i])
        if score < score_threshold:
            continue
        peaks.append((check_fdi(fdi), raster_voxel(int(i), (nx, ny, nz)), score))
    return peaks


def assemble_bbox(center, box_dims) -> BBox3:
    """Box of size ``box_dims`` centered on ``center``; no clamping to the grid."""
    w, h, d = check_positive_triple(box_dims, "box dims")
    cx, cy, cz = (float(c) for c in center)
    return BBox3((cx - w / 2, cy - h / 2, cz - d / 2), (cx + w / 2, cy + h / 2, cz + d / 2))


def expand_box(box: BBox3, margin: float) -> BBox3:
    m = check_non_negative(margin, "margin")
    return BBox3(tuple(v - m for v in box.min), tuple(v + m for v in box.max))


def peaks_to_detections(peaks, box_dims) -> list:
    """Attach regressed box sizes (``{fdi: (W, H, D)}``) to decoded peaks."""
    dets = []
    for fdi, voxel, score in peaks:
        if fdi not in box_dims:
            raise ValueError(f"no box size available for tooth {fdi}")
        dets.append(Detection(fdi, voxel, tuple(box_dims[fdi]), min(max(score, 0.0), 1.0)))
    return dets


class HeatmapEncoder(TransformerMixin, BaseEstimator):
    """Render ground-truth heatmap stacks from labelled tooth boxes.

    Parameters
    ----------
    dims : tuple of int
        Output grid ``(nx, ny, nz)``.
    sigma_scale : float
        Gaussian sigma as a fraction of the box extent.
    isotropic : bool
        Use ``sigma_scale * max(extent)`` on every axis.
    channels : sequence of int, optional
        FDI code per output channel. Defaults to all 32 teeth.
    """

    def __init__(self, dims=(128, 128, 128), sigma_scale=SIGMA_SCALE, isotropic=False,
                 channels=None, truncate=TRUNCATE):
        self.dims = dims
        self.sigma_scale = sigma_scale
        self.isotropic = isotropic
        self.channels = channels
        self.truncate = truncate

    def fit(self, X=None, y=None):
        self.channels_ = tuple(self.channels) if self.channels is not None else FDI_CODES
        self.n_channels_ = len(self.channels_)
        return self

    def transform(self, X):
        """``X`` is a sequence of ``(fdi, BBox3)``."""
        if not hasattr(self, "channels_"):
            self.fit()
        return encode_ground_truth(X, self.dims, self.sigma_scale, self.isotropic,
                                   self.channels_, self.truncate)


class PeakDetector(BaseEstimator):
    """Decode a heatmap stack into detections.

    ``box_dims`` maps FDI codes to regressed box sizes; ``predict`` needs it
    (passed at fit time or call time) to build boxes.
    """

    def __init__(self, score_threshold=0.0, channels=None):
        self.score_threshold = score_threshold
        self.channels = channels

    def fit(self, X=None, y=None, box_dims=None):
        self.channels_ = tuple(self.channels) if self.channels is not None else FDI_CODES
        self.box_dims_ = dict(box_dims or {})
        return self

    def decode(self, stack):
        if not hasattr(self, "channels_"):
            self.fit()
        return decode_peaks(stack, self.score_threshold, self.channels_)

    def predict(self, stack, box_dims=None):
        peaks = self.decode(stack)
        sizes = dict(self.box_dims_)
        sizes.update(box_dims or {})
        return peaks_to_detections(peaks, sizes)
