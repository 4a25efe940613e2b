"""Training objectives with analytic gradients.

Every loss returns ``(value, gradient)``. Arrays keep their floating dtype
(float32 stays float32, anything else is promoted to float64); values are
accumulated in float64 and returned as Python floats.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from ._validation import check_same_shape, check_stack
from .anatomy import FDI_CODES, AdjacencySet, default_adjacency


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 2.0
    beta: float = 4.0
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("focal exponents must be non-negative")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must lie in (0, 0.5)")


@dataclass(frozen=True)
class LossWeights:
    lambda_heat: float = 0.1
    lambda_bbox: float = 0.1
    lambda_gd: float = 1.0

    def __post_init__(self):
        if min(self.lambda_heat, self.lambda_bbox, self.lambda_gd) < 0:
            raise ValueError("loss weights must be non-negative")


def _float(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == np.float32:
        return a
    return a.astype(np.float64)


def focal_loss(x, y, params: FocalParams = FocalParams()):
    """Penalty-reduced focal loss between predicted and target heatmaps.

    Pixels with ``y == 1`` exactly are peaks and use
    ``(1 - x)^alpha * log(x)``; all others use
    ``(1 - y)^beta * x^alpha * log(1 - x)``. The negated sum is divided by
    the number of peaks (at least 1). ``x`` is clamped to
    ``[clamp_eps, 1 - clamp_eps]``; the gradient is zero where the clamp is
    active.
    """
    x = _float(x)
    y = np.asarray(y, dtype=x.dtype)
    check_same_shape(x, y)
    a, b, eps = params.alpha, params.beta, params.clamp_eps
    xc = np.clip(x, eps, 1 - eps)
    pos = np.flatnonzero(y == 1)
    n_peaks = max(pos.size, 1)

    log1m = np.log1p(-xc)
    xa = xc**a
    negw = (1 - y) ** b
    terms = negw * xa * log1m
    grad = negw * (a * xc ** (a - 1) * log1m - xa / (1 - xc))

    xp = xc.ravel()[pos]
    omx = 1 - xp
    logx = np.log(xp)
    terms.ravel()[pos] = omx**a * logx
    grad.ravel()[pos] = -a * omx ** (a - 1) * logx + omx**a / xp

    value = -float(terms.sum(dtype=np.float64)) / n_peaks
    grad *= -1.0 / n_peaks
    grad[(x < eps) | (x > 1 - eps)] = 0
    return value, grad


def intermediate_loss(stacks, y, weights=None, params: FocalParams = FocalParams()):
    """Weighted sum of the focal loss over every stack's output."""
    stacks = list(stacks)
    if weights is None:
        weights = [1.0] * len(stacks)
    weights = [float(w) for w in weights]
    if len(weights) != len(stacks):
        raise ValueError(f"{len(weights)} weights for {len(stacks)} stacks")
    if any(w < 0 for w in weights):
        raise ValueError("supervision weights must be non-negative")
    total, grads = 0.0, []
    for w, s in zip(weights, stacks):
        v, g = focal_loss(s, y, params)
        total += w * v
        grads.append(w * g)
    return total, grads


def _pair_boxes(x_bbox, y_bbox):
    if isinstance(y_bbox, Mapping):
        if not isinstance(x_bbox, Mapping):
            raise ValueError("box sizes must both be mappings or both be sequences")
        missing = [k for k in y_bbox if k not in x_bbox]
        if missing:
            raise ValueError(f"no predicted box size for teeth {missing}")
        keys = list(y_bbox)
        xs = np.array([x_bbox[k] for k in keys], dtype=np.float64).reshape(-1, 3)
        ys = np.array([y_bbox[k] for k in keys], dtype=np.float64).reshape(-1, 3)
        return keys, xs, ys
    xs = np.asarray(x_bbox, dtype=np.float64).reshape(-1, 3)
    ys = np.asarray(y_bbox, dtype=np.float64).reshape(-1, 3)
    if xs.shape != ys.shape:
        raise ValueError(f"{len(xs)} predicted boxes paired with {len(ys)} ground-truth boxes")
    return None, xs, ys


def bbox_mse(x_bbox, y_bbox):
    """Mean squared error over box size components.

    Accepts two ``(n, 3)`` sequences or two ``{fdi: (W, H, D)}`` mappings; in
    the mapping form only teeth present in ``y_bbox`` are scored and the
    gradient is returned as a mapping over those teeth.
    """
    keys, xs, ys = _pair_boxes(x_bbox, y_bbox)
    count = xs.size
    if count == 0:
        return 0.0, ({} if keys is not None else np.zeros((0, 3)))
    diff = xs - ys
    value = float((diff**2).sum()) / count
    grad = 2.0 * diff / count
    if keys is not None:
        return value, {k: grad[n] for n, k in enumerate(keys)}
    return value, grad


def gd_loss(x, adj: AdjacencySet | None = None, channels=FDI_CODES):
    """Sum over adjacent channel pairs of the pixel-wise heatmap product."""
    x = check_stack(_float(x), len(channels))
    if adj is None:
        adj = default_adjacency()
    grad = np.zeros_like(x)
    value = 0.0
    for i, j in adj.channel_pairs(channels):
        value += float((x[i] * x[j]).sum(dtype=np.float64))
        grad[i] += x[j]
        grad[j] += x[i]
    return value, grad


def total_loss(stacks, y_heat, x_bbox, y_bbox, weights: LossWeights = LossWeights(),
               adj: AdjacencySet | None = None, params: FocalParams = FocalParams(),
               stack_weights=None, gd_on: str = "final", channels=FDI_CODES):
    """Weighted heatmap + box-size + disentanglement objective.

    ``gd_on`` selects whether the disentanglement term is taken on the final
    stack only (``"final"``) or summed over every stack (``"all"``).

    Returns ``(value, {"stacks": [...], "bbox": ...})``.
    """
    if gd_on not in ("final", "all"):
        raise ValueError(f"gd_on must be 'final' or 'all', got {gd_on!r}")
    stacks = list(stacks)
    if not stacks:
        raise ValueError("at least one heatmap stack is required")
    l_heat, g_heat = intermediate_loss(stacks, y_heat, stack_weights, params)
    l_bbox, g_bbox = bbox_mse(x_bbox, y_bbox)

    grads = [weights.lambda_heat * g for g in g_heat]
    gd_idx = [len(stacks) - 1] if gd_on == "final" else range(len(stacks))
    l_gd = 0.0
    for k in gd_idx:
        v, g = gd_loss(stacks[k], adj, channels)
        l_gd += v
        grads[k] = grads[k] + weights.lambda_gd * g

    if isinstance(g_bbox, Mapping):
        g_bbox = {k: weights.lambda_bbox * v for k, v in g_bbox.items()}
    else:
        g_bbox = weights.lambda_bbox * g_bbox
    value = weights.lambda_heat * l_heat + weights.lambda_bbox * l_bbox + weights.lambda_gd * l_gd
    return value, {"stacks": grads, "bbox": g_bbox}


def distance_mse(x_dist, y_dist, reduction: str = "sum"):
    """Squared L2 distance between distance maps (``"sum"``) or its mean."""
    x = _float(np.asarray(x_dist))
    y = np.asarray(y_dist, dtype=x.dtype)
    check_same_shape(x, y)
    diff = x - y
    value = float((diff * diff).sum(dtype=np.float64))
    grad = 2.0 * diff
    if reduction == "mean":
        value /= diff.size
        grad /= diff.size
    elif reduction != "sum":
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    return value, grad
