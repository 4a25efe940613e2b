"""Input checks shared by the public functions and estimators."""
from __future__ import annotations

import math
from numbers import Real

import numpy as np


def check_volume_array(data, name: str = "volume") -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3D (nz, ny, nx), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty axis: {arr.shape}")
    return arr


def check_stack(stack, n_channels=None, name: str = "stack") -> np.ndarray:
    """A heatmap stack is a ``(C, nz, ny, nx)`` array."""
    arr = np.asarray(stack)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4D (channels, nz, ny, nx), got shape {arr.shape}")
    if n_channels is not None and arr.shape[0] != n_channels:
        raise ValueError(f"{name} has {arr.shape[0]} channels, expected {n_channels}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("x", "y")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}")


def check_binary_mask(mask, name: str = "mask") -> np.ndarray:
    arr = check_volume_array(mask, name)
    if arr.dtype == bool:
        return arr
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary (values 0 or 1)")
    return arr.astype(bool)


def check_positive_triple(values, name: str) -> tuple:
    vals = tuple(values)
    if len(vals) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(vals)}")
    for v in vals:
        if not isinstance(v, (Real, np.number)) or not math.isfinite(v) or v <= 0:
            raise ValueError(f"{name} components must be positive and finite, got {vals}")
    return vals


def check_probability(p, name: str) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p


def check_non_negative(v, name: str) -> float:
    v = float(v)
    if not v >= 0:
        raise ValueError(f"{name} must be >= 0, got {v}")
    return v
