"""Central finite-difference checks of every analytic gradient."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anatomy import default_adjacency
from .losses import (FocalParams, LossWeights, bbox_mse, distance_mse, focal_loss, gd_loss,
                     total_loss)
from .phantom import make_rng

STEP = 1e-4
TOLERANCE = 1e-4
# below this magnitude errors are measured in absolute terms
REL_FLOOR = 1e-6
FIXTURE_SHAPE = (8, 8, 8)
GD_CHANNELS = (18, 17, 11, 21, 22, 41, 31, 32)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _heat_target(rng, shape):
    y = rng.uniform(0.0, 0.95, shape)
    flat = y.reshape(-1)
    flat[rng.choice(flat.size, 3, replace=False)] = 1.0
    return y


def _focal_case(rng):
    y = _heat_target(rng, FIXTURE_SHAPE)
    x = rng.uniform(0.02, 0.98, FIXTURE_SHAPE)
    return x, lambda v: focal_loss(v, y)


def _gd_case(rng):
    x = rng.uniform(0.0, 1.0, (len(GD_CHANNELS),) + FIXTURE_SHAPE)
    adj = default_adjacency()
    return x, lambda v: gd_loss(v, adj, GD_CHANNELS)


def _bbox_case(rng):
    n = int(rng.integers(1, 33))
    y = rng.uniform(4.0, 24.0, (n, 3))
    x = y + rng.normal(0.0, 2.0, (n, 3))
    return x, lambda v: bbox_mse(v, y)


def _distance_case(rng):
    y = rng.uniform(0.0, 6.0, FIXTURE_SHAPE)
    x = y + rng.normal(0.0, 1.0, FIXTURE_SHAPE)
    return x, lambda v: distance_mse(v, y)


def _composed_case(rng):
    """Optimiser objective on logits: lambda_heat*focal(s(z)) + lambda_gd*gd(s(z))."""
    channels = GD_CHANNELS[:4]
    y = np.stack([_heat_target(rng, FIXTURE_SHAPE) for _ in channels])
    z = rng.normal(0.0, 1.5, y.shape)
    adj = default_adjacency()
    w = LossWeights()

    def fn(logits):
        x = 1.0 / (1.0 + np.exp(-logits))
        fv, fg = focal_loss(x, y)
        gv, gg = gd_loss(x, adj, channels)
        value = w.lambda_heat * fv + w.lambda_gd * gv
        return value, (w.lambda_heat * fg + w.lambda_gd * gg) * x * (1 - x)

    return z, fn


def _total_case(rng):
    """Full weighted objective over two stacks plus box sizes, flattened."""
    channels = GD_CHANNELS[:4]
    y = np.stack([_heat_target(rng, FIXTURE_SHAPE) for _ in channels])
    ybox = rng.uniform(4.0, 24.0, (len(channels), 3))
    shape = y.shape
    size = int(np.prod(shape))
    params = np.concatenate([rng.uniform(0.02, 0.98, 2 * size),
                             (ybox + rng.normal(0.0, 2.0, ybox.shape)).ravel()])

    def fn(p):
        s1 = p[:size].reshape(shape)
        s2 = p[size:2 * size].reshape(shape)
        b = p[2 * size:].reshape(-1, 3)
        value, g = total_loss([s1, s2], y, b, ybox, gd_on="all", channels=channels,
                              params=FocalParams())
        return value, np.concatenate([g["stacks"][0].ravel(), g["stacks"][1].ravel(),
                                      np.asarray(g["bbox"]).ravel()])

    return params, fn


CASES = {
    "focal_loss": _focal_case,
    "gd_loss": _gd_case,
    "bbox_mse": _bbox_case,
    "distance_mse": _distance_case,
    "composed": _composed_case,
    "total_loss": _total_case,
}


def check_gradient(x, fn, coords, step: float = STEP) -> float:
    """Max relative error of ``fn``'s analytic gradient at flat ``coords``."""
    x = np.array(x, dtype=np.float64)
    _, grad = fn(x)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    flat = x.reshape(-1)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        fp, _ = fn(x)
        flat[i] = orig - step
        fm, _ = fn(x)
        flat[i] = orig
        numeric = (fp - fm) / (2 * step)
        worst = max(worst, relative_error(float(grad[i]), numeric))
    return worst


@dataclass(frozen=True)
class GradcheckRow:
    loss: str
    trial: int
    n_coords: int
    max_rel_error: float


def run_gradcheck(trials: int = 100, seed: int = 0, n_coords: int = 12,
                  step: float = STEP, losses=None) -> list:
    """One row per (loss, trial); each trial uses a fresh seeded fixture."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    names = list(losses) if losses is not None else list(CASES)
    rows = []
    for k, name in enumerate(names):
        if name not in CASES:
            raise ValueError(f"unknown loss {name!r}")
        for t in range(trials):
            rng = make_rng((seed, k, t))
            x, fn = CASES[name](rng)
            size = np.asarray(x).size
            coords = rng.choice(size, min(n_coords, size), replace=False)
            rows.append(GradcheckRow(name, t, len(coords), check_gradient(x, fn, coords, step)))
    return rows


def summarize(rows) -> dict:
    out = {}
    for r in rows:
        out[r.loss] = max(out.get(r.loss, 0.0), r.max_rel_error)
    return out


def write_gradcheck_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loss", "trial", "n_coords", "max_rel_error"])
        for r in rows:
            w.writerow([r.loss, r.trial, r.n_coords, f"{r.max_rel_error:.6e}"])
