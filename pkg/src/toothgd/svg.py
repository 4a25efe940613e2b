"""Minimal deterministic SVG line plots (no timestamps, fixed formatting)."""
from __future__ import annotations

import math
from html import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _bounds(values, lim):
    if lim is not None:
        return float(lim[0]), float(lim[1])
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_plot(series, path, xlabel="", ylabel="", title="", xlim=None, ylim=None,
              logy=False, width=480, height=360) -> None:
    """Write ``{name: (xs, ys)}`` as polylines to ``path``."""
    margin = 50
    tx = lambda v: v  # noqa: E731
    ty = (lambda v: math.log10(v) if v > 0 else float("nan")) if logy else (lambda v: v)
    xs_all = [tx(x) for xs, _ in series.values() for x in xs]
    ys_all = [ty(y) for _, ys in series.values() for y in ys]
    x0, x1 = _bounds(xs_all, xlim)
    y0, y1 = _bounds(ys_all, ylim)
    pw, ph = width - 2 * margin, height - 2 * margin

    def px(x):
        return margin + (tx(x) - x0) / (x1 - x0) * pw

    def py(y):
        return height - margin - (ty(y) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
        f'<text x="{width / 2:.1f}" y="{margin / 2:.1f}" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for label, v in ((f"{x0:.3g}", x0), (f"{x1:.3g}", x1)):
        xp = margin + (v - x0) / (x1 - x0) * pw
        out.append(f'<text x="{xp:.1f}" y="{height - margin + 15}" text-anchor="middle" '
                   f'font-size="10">{label}</text>')
    for v in (y0, y1):
        label = f"1e{v:.2g}" if logy else f"{v:.3g}"
        yp = height - margin - (v - y0) / (y1 - y0) * ph
        out.append(f'<text x="{margin - 5}" y="{yp:.1f}" text-anchor="end" '
                   f'font-size="10">{label}</text>')
    for k, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = [(px(x), py(y)) for x, y in zip(xs, ys)]
        pts = [(a, b) for a, b in pts if math.isfinite(a) and math.isfinite(b)]
        if pts:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{coords}"/>')
        out.append(f'<text x="{width - margin - 5}" y="{margin + 15 + 14 * k}" '
                   f'text-anchor="end" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
