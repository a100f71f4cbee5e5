"""Static Error-vs-TE scatter plots as plain SVG."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .runner import CELL_COLUMNS

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#7f7f7f")

WIDTH, HEIGHT = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 30, 55


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt_tick(v: float) -> str:
    return format(v, ".4g")


def aggregate(rows, x: str, y: str, group_by) -> dict:
    """Mean (x, y) per cell, grouped into series.

    Returns ``{series_label: {curve_key: [(lambda, x_mean, y_mean), ...]}}``
    where a curve collects cells differing only in lambda.
    """
    group_by = [group_by] if isinstance(group_by, str) else list(group_by)
    for col in [x, y, *group_by]:
        if rows and col not in rows[0]:
            raise ValueError(f"column {col!r} not in results")
    cells = {}
    for r in rows:
        key = tuple(r.get(c) for c in CELL_COLUMNS if c in r)
        acc = cells.setdefault(key, [r, 0.0, 0.0, 0])
        acc[1] += float(r[x])
        acc[2] += float(r[y])
        acc[3] += 1
    series = {}
    for row, sx, sy, n in cells.values():
        label = " / ".join(str(row[c]) for c in group_by)
        curve = tuple((c, row.get(c)) for c in CELL_COLUMNS if c != "lambda" and c in row)
        lam = float(row.get("lambda", 1.0))
        series.setdefault(label, {}).setdefault(curve, []).append((lam, sx / n, sy / n))
    for curves in series.values():
        for pts in curves.values():
            pts.sort()
    return series


def render_svg(rows, x: str = "te", y: str = "error", group_by="method", title: str = "") -> str:
    """One marker per aggregated cell; lambda sweeps are joined by polylines."""
    series = aggregate(rows, x, y, group_by)
    pts = [(px, py) for curves in series.values() for c in curves.values() for _, px, py in c]
    finite = [(px, py) for px, py in pts if math.isfinite(px) and math.isfinite(py)]
    xs = [p[0] for p in finite] or [0.0, 1.0]
    ys = [p[1] for p in finite] or [0.0, 1.0]
    xt = _nice_ticks(min(0.0, min(xs)), max(xs) if max(xs) > min(0.0, min(xs)) else 1.0)
    ylo, yhi = min(ys), max(ys)
    pad = 0.05 * (yhi - ylo) if yhi > ylo else 0.5
    yt = _nice_ticks(ylo - pad, yhi + pad)
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append(f'<g class="axes" stroke="black" fill="none">'
               f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/>'
               f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/></g>')
    for t in xt:
        px = sx(t)
        out.append(f'<line class="tick" x1="{px:.2f}" y1="{TOP + ph}" x2="{px:.2f}" y2="{TOP + ph + 4}" stroke="black"/>'
                   f'<text x="{px:.2f}" y="{TOP + ph + 16}" text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in yt:
        py = sy(t)
        out.append(f'<line class="tick" x1="{LEFT - 4}" y1="{py:.2f}" x2="{LEFT}" y2="{py:.2f}" stroke="black"/>'
                   f'<text x="{LEFT - 7}" y="{py + 4:.2f}" text-anchor="end">{_fmt_tick(t)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x.upper() if x == "te" else x.capitalize())}</text>')
    out.append(f'<text transform="translate(16 {TOP + ph / 2:.2f}) rotate(-90)" text-anchor="middle">'
               f'{escape(y.upper() if y == "te" else y.capitalize())}</text>')

    for i, (label, curves) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<g class="series" data-label="{escape(label)}">')
        for curve in curves.values():
            good = [(px, py) for _, px, py in curve if math.isfinite(px) and math.isfinite(py)]
            if len(good) > 1:
                coords = " ".join(f"{sx(px):.2f},{sy(py):.2f}" for px, py in good)
                out.append(f'<polyline class="sweep" points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for px, py in good:
                out.append(f'<circle class="marker" cx="{sx(px):.2f}" cy="{sy(py):.2f}" r="4" fill="{color}"/>')
        out.append("</g>")

    lx, ly = LEFT + pw + 15, TOP + 10
    out.append('<g class="legend">')
    if not series:
        out.append(f'<text x="{lx}" y="{ly + 4}" fill="#777">no data</text>')
    for i, label in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        yy = ly + 18 * i
        out.append(f'<rect x="{lx}" y="{yy - 5}" width="10" height="10" fill="{color}"/>'
                   f'<text x="{lx + 16}" y="{yy + 4}">{escape(label)}</text>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"


def plot_results(rows, out_path, x: str = "te", y: str = "error", group_by="method", title: str = "") -> Path:
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(rows, x, y, group_by, title))
    return path
