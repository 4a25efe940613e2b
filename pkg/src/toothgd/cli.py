"""Command line front end: ``toothgd <command> [options]``.

Exit codes: 0 success, 1 validation error or bad usage, 2 I/O error.
The default output directory comes from ``$TOOTHGD_OUTPUT_DIR`` (else ``.``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .anatomy import FDI_CODES, check_fdi, default_adjacency, load_adjacency
from .distmap import make_gt_distance, threshold_to_mask
from .gradcheck import TOLERANCE, run_gradcheck, summarize, write_gradcheck_csv
from .heatmap import (SIGMA_SCALE, Detection, decode_peaks, encode_ground_truth,
                      load_detections, peaks_to_detections, save_detections)
from .metrics import evaluate
from .optimize import (OptimizerConfig, disentangle_report, optimize_heatmaps, pair_overlap,
                       two_tooth_fixture)
from .phantom import PhantomSpec, generate_phantom
from .pipeline import run_experiment, segment_instances
from .volume import Volume3, load_volume, save_volume

ENV_OUTPUT = "TOOTHGD_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out_default() -> Path:
    return Path(os.environ.get(ENV_OUTPUT, "."))


def _resolve(path, default_name: str) -> Path:
    return Path(path) if path else _out_default() / default_name


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- commands -----------------------------------------------------------------

def _write_phantom(spec_obj, seed, out: Path):
    truth = generate_phantom(PhantomSpec.from_json({**spec_obj, "seed": seed}))
    out.mkdir(parents=True, exist_ok=True)
    save_volume(Volume3(truth.intensity), out / "intensity")
    save_volume(Volume3(truth.labels), out / "labels")
    save_detections(truth.gt_detections(), out / "gt.json")
    return len(truth.teeth)


def cmd_phantom(args) -> int:
    spec = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if not isinstance(spec, dict):
        raise ValueError("phantom spec must be a JSON object")
    spec.pop("seed", None)
    if args.dims:
        spec["dims"] = args.dims
    if args.missing:
        spec["missing_teeth"] = args.missing
    out = _resolve(args.out, "phantom")
    seeds = [args.seed + k for k in range(args.count)]
    if args.count == 1:
        targets = [out]
    else:
        targets = [out / f"phantom_{s:04d}" for s in seeds]
    counts = Parallel(n_jobs=args.jobs, backend="threading")(
        delayed(_write_phantom)(spec, s, t) for s, t in zip(seeds, targets)
    )
    for t, n in zip(targets, counts):
        print(f"{t}: {n} teeth")
    return 0


def _channels(arg):
    return tuple(check_fdi(c) for c in arg) if arg else FDI_CODES


def cmd_encode(args) -> int:
    dets = load_detections(args.gt)
    if args.dims:
        dims = tuple(args.dims)
    elif args.like:
        dims = load_volume(args.like).dims
    else:
        raise ValueError("encode needs --dims or --like")
    channels = _channels(args.channels)
    teeth = [(d.fdi, d.bbox) for d in dets if d.fdi in channels]
    stack = encode_ground_truth(teeth, dims, args.sigma_scale, args.isotropic, channels)
    out = _resolve(args.out, "stack")
    out.mkdir(parents=True, exist_ok=True)
    for fdi, ch in zip(channels, stack):
        save_volume(Volume3(ch), out / f"channel_{fdi}")
    _write_json(out / "stack.json", {
        "dims": list(dims),
        "channels": list(channels),
        "sigma_scale": args.sigma_scale,
        "isotropic": bool(args.isotropic),
        "sizes": {str(d.fdi): list(d.dims) for d in dets if d.fdi in channels},
    })
    print(f"{out}: {len(channels)} channels")
    return 0


def load_stack(path):
    path = Path(path)
    meta = json.loads((path / "stack.json").read_text())
    channels = tuple(int(c) for c in meta["channels"])
    vols = [load_volume(path / f"channel_{c}") for c in channels]
    stack = np.stack([v.data.astype(np.float32) for v in vols])
    sizes = {int(k): tuple(v) for k, v in meta.get("sizes", {}).items()}
    return stack, channels, sizes


def cmd_decode(args) -> int:
    stack, channels, sizes = load_stack(getattr(args, "in"))
    if args.sizes:
        sizes = {d.fdi: d.dims for d in load_detections(args.sizes)}
    peaks = decode_peaks(stack, args.threshold, channels)
    if sizes:
        dets = peaks_to_detections([p for p in peaks if p[0] in sizes], sizes)
    else:
        # without regressed sizes, emit unit boxes at the peaks
        dets = [Detection(f, v, (1, 1, 1), min(max(s, 0.0), 1.0)) for f, v, s in peaks]
    out = _resolve(args.out, "dets.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_detections(dets, out)
    print(f"{out}: {len(dets)} detections")
    return 0


def cmd_distmap(args) -> int:
    labels = load_volume(args.labels)
    dist = make_gt_distance(labels.data, args.label, labels.spacing if args.physical else (1, 1, 1))
    out = _resolve(args.out, f"distance_{args.label}")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_volume(Volume3(dist.astype(np.float32), labels.spacing), out)
    if args.mask_out:
        save_volume(Volume3(threshold_to_mask(dist, args.tau), labels.spacing), Path(args.mask_out))
    print(f"{out}: max distance {float(dist.max()):.6f}")
    return 0


def cmd_segment(args) -> int:
    labels = load_volume(args.labels)
    dets = load_detections(args.dets)
    masks = segment_instances(None, labels, dets, args.margin, args.tau, n_jobs=args.jobs)
    out = _resolve(args.out, "masks")
    out.mkdir(parents=True, exist_ok=True)
    seen = {}
    for fdi, mask in masks:
        # repeated codes (misidentified teeth) get a numeric suffix
        n = seen[fdi] = seen.get(fdi, 0) + 1
        save_volume(mask, out / (f"tooth_{fdi}" if n == 1 else f"tooth_{fdi}_{n}"))
    print(f"{out}: {len(masks)} masks")
    return 0


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise ValueError("--pred and --gt need the same number of files")
    config = {"iou_thresh": args.iou, "matched_only": args.matched_only}
    if args.labels:
        if len(args.labels) != len(args.gt):
            raise ValueError("--labels needs one file per --gt file")
        config["label_files"] = args.labels
    report = evaluate(args.pred, args.gt, config)
    out = _resolve(args.out, "eval")
    report.write(out, svg=args.svg)
    s = report.summary()
    print(" ".join(f"{k}={v:.6f}" for k, v in s.items()))
    return 0


def cmd_demo(args) -> int:
    if args.fixture != "two-tooth":
        raise ValueError(f"unknown fixture {args.fixture!r}")
    target, channels = two_tooth_fixture(tuple(args.dims), args.separation, args.extent)
    adj = load_adjacency(args.adjacency) if args.adjacency else default_adjacency()
    base = OptimizerConfig(step_size=args.step_size, momentum=args.momentum,
                           max_iters=args.max_iters)
    cfgs = [base.with_gd_weight(0.0), base.with_gd_weight(args.lambda_gd)]
    runs = Parallel(n_jobs=min(args.jobs, 2), backend="threading")(
        delayed(optimize_heatmaps)(target, adj, c, args.seed, channels) for c in cfgs
    )
    out = _resolve(args.out, "disentangle")
    out.mkdir(parents=True, exist_ok=True)
    labels = ("lambda_gd=0", f"lambda_gd={args.lambda_gd:g}")
    disentangle_report(runs[0][1], runs[1][1], out / "gd_loss.csv", svg=not args.no_svg,
                       labels=labels)
    summary = {}
    for label, (x, tr) in zip(labels, runs):
        summary[label] = {"iterations": len(tr), "overlap": pair_overlap(x),
                          "peaks": [list(p) for p in tr.final.peaks]}
        print(f"{label}: overlap={pair_overlap(x):.6g} peaks={tr.final.peaks}")
    _write_json(out / "summary.json", summary)
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradcheck(args.trials, args.seed, args.coords)
    out = _resolve(args.out, "gradcheck.csv")
    write_gradcheck_csv(rows, out)
    worst = summarize(rows)
    for name, err in worst.items():
        print(f"{name}: max_rel_error={err:.3e}")
    if max(worst.values()) > TOLERANCE:
        print(f"gradient check failed (tolerance {TOLERANCE:g})", file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    if not isinstance(cfg, dict):
        raise ValueError("experiment config must be a JSON object")
    if args.seed is not None:
        seeds = cfg.get("seeds", [0])
        n = seeds if isinstance(seeds, int) else len(seeds)
        cfg["seeds"] = [args.seed + k for k in range(n)]
    out = Path(args.out) if args.out else (
        Path(cfg["output_dir"]) if "output_dir" in cfg else _out_default() / "run")
    report = run_experiment(cfg, out, n_jobs=args.jobs)
    print(" ".join(f"{k}={v:.6f}" for k, v in report.summary().items()))
    return 0


# --- parser ---------------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _seed(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"seed must be non-negative, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="toothgd", description="Tooth detection heatmap toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=_seed, default=0, help="random seed (default 0)")
        sp.add_argument("--jobs", type=_positive_int, default=1, help="parallel workers")

    sp = sub.add_parser("phantom", help="generate synthetic phantoms")
    sp.add_argument("--spec", help="phantom spec JSON")
    sp.add_argument("--dims", type=_positive_int, nargs=3, metavar=("NX", "NY", "NZ"))
    sp.add_argument("--missing", type=int, nargs="*", help="FDI codes to leave out")
    sp.add_argument("--count", type=_positive_int, default=1, help="phantoms (seed, seed+1, ...)")
    sp.add_argument("--out", help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("encode", help="render ground-truth heatmap stack")
    sp.add_argument("--gt", required=True, help="ground-truth detections JSON")
    sp.add_argument("--dims", type=_positive_int, nargs=3, metavar=("NX", "NY", "NZ"))
    sp.add_argument("--like", help="volume whose grid to use")
    sp.add_argument("--sigma-scale", type=float, default=SIGMA_SCALE)
    sp.add_argument("--isotropic", action="store_true")
    sp.add_argument("--channels", type=int, nargs="*", help="FDI code per channel")
    sp.add_argument("--out", help="stack directory")
    common(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="decode peaks of a heatmap stack")
    sp.add_argument("--in", required=True, help="stack directory")
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--sizes", help="detections JSON supplying box sizes")
    sp.add_argument("--out", help="detections JSON")
    common(sp)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("distmap", help="chamfer distance map of one label")
    sp.add_argument("--labels", required=True, help="label volume")
    sp.add_argument("--label", type=int, required=True, help="label value (channel + 1)")
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--physical", action="store_true", help="use voxel spacing")
    sp.add_argument("--mask-out", help="also write the thresholded mask here")
    sp.add_argument("--out", help="output volume path")
    common(sp)
    sp.set_defaults(func=cmd_distmap)

    sp = sub.add_parser("segment", help="per-tooth masks from detections")
    sp.add_argument("--labels", required=True, help="label volume")
    sp.add_argument("--dets", required=True, help="detections JSON")
    sp.add_argument("--margin", type=float, default=10.0)
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--out", help="mask directory")
    common(sp)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("eval", help="evaluate detections against ground truth")
    sp.add_argument("--pred", nargs="+", required=True)
    sp.add_argument("--gt", nargs="+", required=True)
    sp.add_argument("--labels", nargs="*", help="label volumes for OIR")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--matched-only", action="store_true")
    sp.add_argument("--svg", action="store_true", help="also write pr_curve.svg")
    sp.add_argument("--out", help="report directory")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("demo-disentangle", help="heatmap optimisation with and without GD loss")
    sp.add_argument("--lambda-gd", type=float, default=1.0)
    sp.add_argument("--fixture", default="two-tooth")
    sp.add_argument("--dims", type=_positive_int, nargs=3, default=[64, 64, 64])
    sp.add_argument("--separation", type=int, default=2)
    sp.add_argument("--extent", type=_positive_int, default=12)
    sp.add_argument("--adjacency", help="adjacency JSON (list of FDI pairs)")
    sp.add_argument("--max-iters", type=_positive_int, default=300)
    sp.add_argument("--step-size", type=float, default=0.5)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--no-svg", action="store_true")
    sp.add_argument("--out", help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--trials", type=_positive_int, default=100)
    sp.add_argument("--coords", type=_positive_int, default=12, help="coordinates per fixture")
    sp.add_argument("--out", help="CSV path")
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("run", help="run an experiment from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="run directory")
    sp.add_argument("--seed", type=_seed, default=None, help="first phantom seed")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as exc:  # includes malformed JSON
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
