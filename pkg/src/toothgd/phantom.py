"""Seeded synthetic dental-arch phantoms.

Teeth are axis-aligned ellipsoids with odd voxel extents and integer
centers, placed along two elliptical arcs (upper and lower jaw) in FDI order.
Because each ellipsoid is symmetric about an integer voxel, its tight box has
an integer center and its rendered heatmap peak is exactly 1.

All randomness comes from ``numpy.random.Philox`` (a counter-based generator
that produces identical streams on every platform) seeded with ``spec.seed``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_non_negative, check_positive_triple, check_probability
from .anatomy import (FDI_CODES, LOWER_ARCH, UPPER_ARCH, check_fdi, default_adjacency,
                      fdi_to_channel, position)
from .heatmap import SIGMA_SCALE, Detection
from .volume import BBox3, bbox_of_mask

# (mesio-distal width, bucco-lingual depth, height) in voxels, by tooth position
UPPER_EXTENTS = {1: (9, 7, 19), 2: (7, 7, 17), 3: (9, 9, 21), 4: (7, 9, 17),
                 5: (7, 9, 17), 6: (11, 11, 15), 7: (11, 11, 15), 8: (9, 11, 13)}
LOWER_EXTENTS = {1: (7, 7, 17), 2: (7, 7, 17), 3: (7, 9, 19), 4: (7, 9, 17),
                 5: (7, 9, 17), 6: (11, 11, 15), 7: (11, 11, 15), 8: (9, 11, 13)}


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an integer seed or a tuple of integers."""
    if isinstance(seed, (tuple, list)):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(s) for s in seed])))
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


@dataclass
class PhantomSpec:
    seed: int = 0
    dims: tuple = (128, 128, 128)
    arch_radii: tuple = (40.0, 46.0)  # (x, y) semi-axes of the arch ellipse
    arch_center: tuple | None = None  # (x, y); default (nx / 2, 0.31 * ny)
    arch_separation: float = 6.0  # vertical gap between upper and lower crowns
    gap: float = 1.0  # clearance between neighbouring teeth
    upper_extents: dict = field(default_factory=lambda: dict(UPPER_EXTENTS))
    lower_extents: dict = field(default_factory=lambda: dict(LOWER_EXTENTS))
    center_jitter: float = 1.0  # std (voxels), clipped to 2 std
    size_jitter: float = 1.0  # std (voxels) of each extent, rounded to even steps
    missing_teeth: tuple = ()
    intensity_noise: float = 0.02

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        check_positive_triple(self.dims, "dims")
        check_positive_triple(tuple(self.arch_radii) + (1.0,), "arch_radii")
        check_non_negative(self.center_jitter, "center_jitter")
        check_non_negative(self.size_jitter, "size_jitter")
        check_non_negative(self.gap, "gap")
        check_non_negative(self.arch_separation, "arch_separation")
        check_non_negative(self.intensity_noise, "intensity_noise")
        self.upper_extents = {int(k): tuple(int(e) for e in v) for k, v in self.upper_extents.items()}
        self.lower_extents = {int(k): tuple(int(e) for e in v) for k, v in self.lower_extents.items()}
        for table in (self.upper_extents, self.lower_extents):
            if sorted(table) != list(range(1, 9)):
                raise ValueError("extent tables need entries for positions 1..8")
            for v in table.values():
                check_positive_triple(v, "tooth extents")
        self.missing_teeth = tuple(sorted(check_fdi(t) for t in self.missing_teeth))

    @classmethod
    def from_json(cls, obj) -> "PhantomSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown phantom spec keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PhantomSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ToothTruth:
    fdi: int
    center: tuple  # integer voxel (x, y, z)
    box: BBox3

    @property
    def label(self) -> int:
        return fdi_to_channel(self.fdi) + 1

    @property
    def dims(self) -> tuple:
        return tuple(int(round(e)) for e in self.box.extent)


@dataclass
class PhantomTruth:
    spec: PhantomSpec
    intensity: np.ndarray  # (nz, ny, nx) float32 in [0, 1]
    labels: np.ndarray  # (nz, ny, nx) uint8, channel + 1, 0 = background
    teeth: list  # ToothTruth in channel order
    arch_center: tuple = (0.0, 0.0)

    def gt_pairs(self) -> list:
        return [(t.fdi, t.box) for t in self.teeth]

    def gt_detections(self) -> list:
        return [Detection(t.fdi, t.center, t.dims, 1.0) for t in self.teeth]

    def mask(self, fdi: int) -> np.ndarray:
        return self.labels == fdi_to_channel(fdi) + 1

    def tooth(self, fdi: int) -> ToothTruth:
        for t in self.teeth:
            if t.fdi == fdi:
                return t
        raise KeyError(fdi)


def _arch_point(theta, radii, center):
    a, b = radii
    cx, cy = center
    return cx + a * math.sin(theta), cy + b * math.cos(theta)


def _tangent_is_x(theta, radii) -> bool:
    a, b = radii
    return abs(a * math.cos(theta)) >= abs(b * math.sin(theta))


def _place_side(sequence, sizes, jitter, radii, center, gap, sign):
    """Walk outward from the midline, returning integer (x, y) per tooth.

    ``sign`` is -1 for the patient-right half (x below the midline).
    """
    out = {}
    cx = center[0]
    theta, step = 0.0, 0.002
    prev = None
    for fdi in sequence:
        jx, jy = jitter[fdi][:2]
        while True:
            theta += step
            if theta > 2.6:
                raise ValueError("arch too short to hold all teeth; enlarge arch_radii")
            px, py = _arch_point(sign * theta, radii, center)
            w, d, _ = sizes[fdi]
            ex, ey = (w, d) if _tangent_is_x(theta, radii) else (d, w)
            r = max(ex, ey) / 2
            pt = (round(px + jx), round(py + jy))
            if prev is None:
                ok = sign * (pt[0] - cx) >= r + gap / 2
            else:
                dist = math.hypot(pt[0] - prev[0][0], pt[1] - prev[0][1])
                ok = dist >= r + prev[1] + gap
            if ok:
                out[fdi] = (pt, (ex, ey))
                prev = (pt, r)
                break
    return out


def _ellipsoid(labels, center, extents, value, fdi):
    cx, cy, cz = center
    rx, ry, rz = (e / 2 for e in extents)
    hx, hy, hz = ((e - 1) // 2 for e in extents)
    nz, ny, nx = labels.shape
    if (cx - hx < 0 or cy - hy < 0 or cz - hz < 0
            or cx + hx >= nx or cy + hy >= ny or cz + hz >= nz):
        raise ValueError(f"tooth {fdi} at {center} does not fit in the volume")
    dz = np.arange(-hz, hz + 1)[:, None, None] / rz
    dy = np.arange(-hy, hy + 1)[None, :, None] / ry
    dx = np.arange(-hx, hx + 1)[None, None, :] / rx
    inside = dx**2 + dy**2 + dz**2 <= 1.0
    region = labels[cz - hz:cz + hz + 1, cy - hy:cy + hy + 1, cx - hx:cx + hx + 1]
    if np.any(region[inside] != 0):
        raise ValueError(f"tooth {fdi} overlaps a neighbour; increase gap")
    region[inside] = value


def generate_phantom(spec: PhantomSpec | None = None) -> PhantomTruth:
    """Build label and intensity volumes plus per-tooth ground truth."""
    spec = spec or PhantomSpec()
    rng = make_rng(spec.seed)
    nx, ny, nz = spec.dims
    center = spec.arch_center or (nx / 2, 0.31 * ny)
    zc = nz / 2

    sizes, jitter = {}, {}
    for fdi in FDI_CODES:
        table = spec.upper_extents if fdi < 30 else spec.lower_extents
        base = np.array(table[position(fdi)], dtype=float)
        step = np.round(rng.normal(0.0, spec.size_jitter, 3) / 2) * 2 if spec.size_jitter else np.zeros(3)
        sizes[fdi] = tuple(int(max(3, e)) for e in base + step)
        j = rng.normal(0.0, spec.center_jitter, 3) if spec.center_jitter else np.zeros(3)
        jitter[fdi] = tuple(np.clip(j, -2 * spec.center_jitter, 2 * spec.center_jitter))

    placed = {}
    for arch in (UPPER_ARCH, LOWER_ARCH):
        right = [t for t in arch[:8]][::-1]  # 11..18 or 41..48, midline outward
        left = list(arch[8:])
        placed.update(_place_side(right, sizes, jitter, spec.arch_radii, center, spec.gap, -1))
        placed.update(_place_side(left, sizes, jitter, spec.arch_radii, center, spec.gap, +1))

    labels = np.zeros((nz, ny, nx), dtype=np.uint8)
    teeth = []
    max_z_shift = max(0.0, spec.arch_separation / 2 - 1)
    for fdi in FDI_CODES:
        (x, y), (ex, ey) = placed[fdi]
        ez = sizes[fdi][2]
        jz = float(np.clip(jitter[fdi][2], -max_z_shift, max_z_shift))
        half = (ez - 1) / 2
        if fdi < 30:
            z = math.ceil(zc + spec.arch_separation / 2 + half + jz)
        else:
            z = math.floor(zc - spec.arch_separation / 2 - half + jz)
        if fdi in spec.missing_teeth:
            continue
        c = (int(x), int(y), int(z))
        _ellipsoid(labels, c, (ex, ey, ez), fdi_to_channel(fdi) + 1, fdi)
        box = bbox_of_mask(labels == fdi_to_channel(fdi) + 1)
        teeth.append(ToothTruth(fdi, c, box))

    intensity = _intensity(labels, spec, rng, center, zc)
    return PhantomTruth(spec, intensity, labels, teeth, center)


def _intensity(labels, spec, rng, center, zc):
    nz, ny, nx = labels.shape
    z, y, x = np.ogrid[:nz, :ny, :nx]
    a, b = spec.arch_radii
    # soft tissue/bone slab around both arches
    jaw = (((x - center[0]) / (a + 12)) ** 2 + ((y - center[1]) / (b + 12)) ** 2 <= 1) & (
        np.abs(z - zc) <= 26
    )
    img = np.where(jaw, 0.3, 0.0)
    shade = {t: 0.9 + 0.1 * v for t, v in zip(range(1, 33), rng.random(32))}
    lut = np.zeros(256)
    for k, v in shade.items():
        lut[k] = v
    img = np.where(labels > 0, lut[labels], img)
    if spec.intensity_noise:
        img = img + rng.normal(0.0, spec.intensity_noise, img.shape)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return img.astype(np.float32)


def arch_angle(truth: PhantomTruth, fdi: int) -> float:
    """Angle of a tooth center around the arch center (0 at the front)."""
    t = truth.tooth(fdi)
    cx, cy = truth.arch_center
    return math.atan2(t.center[0] - cx, t.center[1] - cy)


def perturb_predictions(truth: PhantomTruth, center_sigma: float = 0.0, size_sigma: float = 0.0,
                        drop_prob: float = 0.0, misid_prob: float = 0.0, seed: int = 0,
                        adjacency=None, sigma_scale: float = SIGMA_SCALE) -> list:
    """Noisy detections derived from phantom ground truth.

    Per tooth: the center moves by Gaussian noise (``center_sigma`` voxels)
    and is rounded to a voxel, each box size is scaled by
    ``1 + N(0, size_sigma)``, the tooth is dropped with ``drop_prob`` and
    relabelled as a random adjacent tooth with ``misid_prob``. The score is
    the ground-truth heatmap value at the predicted center.
    """
    check_non_negative(center_sigma, "center_sigma")
    check_non_negative(size_sigma, "size_sigma")
    check_probability(drop_prob, "drop_prob")
    check_probability(misid_prob, "misid_prob")
    adjacency = adjacency or default_adjacency()
    rng = make_rng(seed)
    dets = []
    for t in truth.teeth:
        # fixed draw count per tooth keeps streams aligned across settings
        dc = rng.normal(0.0, 1.0, 3) * center_sigma
        ds = rng.normal(0.0, 1.0, 3) * size_sigma
        u_drop, u_mis, u_pick = rng.random(3)
        if u_drop < drop_prob:
            continue
        center = tuple(int(round(c + d)) for c, d in zip(t.center, dc))
        dims = tuple(max(1.0, e * (1.0 + s)) for e, s in zip(t.box.extent, ds))
        sig = [sigma_scale * e for e in t.box.extent]
        offset2 = sum(((c - c0) / s) ** 2 for c, c0, s in zip(center, t.center, sig))
        score = math.exp(-offset2 / 2)
        fdi = t.fdi
        if u_mis < misid_prob:
            nbrs = adjacency.neighbors(fdi)
            if nbrs:
                fdi = nbrs[min(int(u_pick * len(nbrs)), len(nbrs) - 1)]
        dets.append(Detection(fdi, center, dims, score))
    return dets
