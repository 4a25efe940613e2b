"""Direct heatmap optimisation showing the disentanglement effect.

The heatmaps are free parameters: logits ``z`` with ``x = logistic(z)``.
Heavy-ball descent minimises ``lambda_heat * focal(x, target) +
lambda_gd * gd(x)``; no network is involved.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_stack
from .anatomy import FDI_CODES, AdjacencySet, default_adjacency
from .heatmap import decode_peaks, encode_ground_truth
from .losses import FocalParams, LossWeights, focal_loss, gd_loss
from .phantom import make_rng
from .svg import line_plot
from .volume import BBox3

# logits are evaluated inside this range so float32 outputs never round to 0 or 1
LOGIT_LIMIT = 16.0


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration
        self.value = value


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.5
    momentum: float = 0.9
    max_iters: int = 2000
    loss_tolerance: float = 1e-8
    weights: LossWeights = LossWeights()
    focal: FocalParams = FocalParams()
    init_prob: float = 1e-4  # logistic(z) at initialisation, before noise
    init_noise: float = 0.01  # std of the logit noise
    dtype: str = "float32"

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if self.loss_tolerance < 0:
            raise ValueError("loss_tolerance must be non-negative")
        if not 0 < self.init_prob < 1:
            raise ValueError("init_prob must lie in (0, 1)")
        if self.init_noise < 0:
            raise ValueError("init_noise must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    def with_gd_weight(self, lambda_gd: float) -> "OptimizerConfig":
        w = LossWeights(self.weights.lambda_heat, self.weights.lambda_bbox, float(lambda_gd))
        return OptimizerConfig(self.step_size, self.momentum, self.max_iters, self.loss_tolerance,
                               w, self.focal, self.init_prob, self.init_noise, self.dtype)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    total: float
    heat: float
    gd: float
    peaks: tuple  # ((x, y, z), ...) per channel


@dataclass
class OptTrace:
    channels: tuple
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(rec)

    @property
    def final(self) -> TraceRecord:
        if not self.records:
            raise ValueError("empty trace")
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -LOGIT_LIMIT, LOGIT_LIMIT)))


def _objective(x, target, adj, cfg, channels):
    heat, g_heat = focal_loss(x, target, cfg.focal)
    # L_GD is always recorded, even when it carries no weight
    gd, g_gd = gd_loss(x, adj, channels)
    w = cfg.weights
    total = w.lambda_heat * heat + w.lambda_gd * gd
    grad = w.lambda_heat * g_heat
    if w.lambda_gd:
        grad += w.lambda_gd * g_gd
    return total, heat, gd, grad


def optimize_heatmaps(target, adj: AdjacencySet | None = None,
                      cfg: OptimizerConfig = OptimizerConfig(), seed: int = 0,
                      channels=FDI_CODES):
    """Heavy-ball descent on heatmap logits.

    Returns ``(stack, trace)``; ``stack`` is the heatmap evaluated at the
    last recorded iteration. Stops after ``max_iters`` records or when the
    relative change of the total loss falls below ``loss_tolerance``.
    """
    channels = tuple(channels)
    dtype = np.dtype(cfg.dtype)
    target = check_stack(np.asarray(target), len(channels)).astype(dtype)
    if not np.all((target >= 0) & (target <= 1)):
        raise ValueError("target heatmaps must lie in [0, 1]")
    adj = adj if adj is not None else default_adjacency()
    rng = make_rng(seed)
    z0 = math.log(cfg.init_prob / (1 - cfg.init_prob))
    z = (z0 + cfg.init_noise * rng.standard_normal(target.shape)).astype(dtype)
    v = np.zeros_like(z)
    step, mom = dtype.type(cfg.step_size), dtype.type(cfg.momentum)
    trace = OptTrace(channels)
    prev = None
    for it in range(int(cfg.max_iters)):
        x = _logistic(z)
        total, heat, gd, grad = _objective(x, target, adj, cfg, channels)
        if not math.isfinite(total):
            raise DivergenceError(it, total)
        peaks = tuple(p[1] for p in decode_peaks(x, 0.0, channels))
        trace.append(TraceRecord(it, total, heat, gd, peaks))
        if prev is not None and abs(prev - total) <= cfg.loss_tolerance * abs(prev):
            break
        prev = total
        if it == cfg.max_iters - 1:
            break
        grad *= x * (1 - x)  # chain rule through the logistic
        v *= mom
        v -= step * grad
        z += v
        if not np.all(np.isfinite(z)):
            raise DivergenceError(it, float("nan"))
    return x, trace


def two_tooth_fixture(dims=(64, 64, 64), separation: int = 2, extent: int = 12,
                      channels=(11, 21)):
    """Two adjacent-tooth Gaussians whose centers are ``separation`` voxels
    apart along x, centered in the grid. Returns ``(target, channels)``."""
    nx, ny, nz = dims
    cy, cz = ny // 2, nz // 2
    x0 = nx // 2 - separation // 2
    centers = [(x0, cy, cz), (x0 + separation, cy, cz)]
    half = extent / 2
    teeth = [(t, BBox3(tuple(c - half for c in ctr), tuple(c + half for c in ctr)))
             for t, ctr in zip(channels, centers)]
    return encode_ground_truth(teeth, dims, channels=channels), tuple(channels)


def pair_overlap(stack, i: int = 0, j: int = 1) -> float:
    stack = np.asarray(stack)
    return float((stack[i].astype(np.float64) * stack[j]).sum())


def disentangle_report(trace_a: OptTrace, trace_b: OptTrace, out, svg: bool = True,
                       labels=("lambda_gd=0", "lambda_gd>0")) -> None:
    """Write per-iteration L_GD for two runs (``out``) plus a final peak table
    (``<stem>_peaks.csv``) and optionally ``<stem>.svg``."""
    if not len(trace_a) or not len(trace_b):
        raise ValueError("cannot report an empty trace")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = max(len(trace_a), len(trace_b))
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", f"gd_{labels[0]}", f"gd_{labels[1]}",
                    f"total_{labels[0]}", f"total_{labels[1]}"])
        for k in range(n):
            row = [k]
            for attr in ("gd", "total"):
                for tr in (trace_a, trace_b):
                    row.append(repr(getattr(tr.records[k], attr)) if k < len(tr) else "")
            w.writerow(row)
    peaks_path = out.with_name(out.stem + "_peaks.csv")
    with peaks_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "fdi", "x", "y", "z", "final_gd"])
        for label, tr in zip(labels, (trace_a, trace_b)):
            rec = tr.final
            for fdi, p in zip(tr.channels, rec.peaks):
                w.writerow([label, fdi, *p, repr(rec.gd)])
    if svg:
        series = {}
        for label, tr in zip(labels, (trace_a, trace_b)):
            series[label] = (tr.column("iteration"), np.maximum(tr.column("gd"), 1e-12))
        line_plot(series, out.with_suffix(".svg"), xlabel="iteration", ylabel="L_GD",
                  title="Gaussian disentanglement loss", logy=True)


class HeatmapOptimizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(target)`` optimises heatmaps toward
    ``target``; ``transform`` returns the optimised stack."""

    def __init__(self, lambda_heat=0.1, lambda_gd=1.0, step_size=0.5, momentum=0.9,
                 max_iters=2000, loss_tolerance=1e-8, channels=None, adjacency=None,
                 seed=0, dtype="float32"):
        self.lambda_heat = lambda_heat
        self.lambda_gd = lambda_gd
        self.step_size = step_size
        self.momentum = momentum
        self.max_iters = max_iters
        self.loss_tolerance = loss_tolerance
        self.channels = channels
        self.adjacency = adjacency
        self.seed = seed
        self.dtype = dtype

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(self.step_size, self.momentum, self.max_iters, self.loss_tolerance,
                               LossWeights(self.lambda_heat, 0.1, self.lambda_gd),
                               dtype=self.dtype)

    def fit(self, X, y=None):
        channels = tuple(self.channels) if self.channels is not None else FDI_CODES
        self.stack_, self.trace_ = optimize_heatmaps(X, self.adjacency, self._config(),
                                                     self.seed, channels)
        self.channels_ = channels
        self.n_iter_ = len(self.trace_)
        return self

    def transform(self, X=None):
        if not hasattr(self, "stack_"):
            raise ValueError("HeatmapOptimizer is not fitted")
        return self.stack_

    def predict(self, X=None):
        """Decoded peaks of the optimised stack."""
        if not hasattr(self, "stack_"):
            raise ValueError("HeatmapOptimizer is not fitted")
        return decode_peaks(self.stack_, 0.0, self.channels_)
