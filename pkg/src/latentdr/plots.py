"""Minimal static SVG charts: box plots with 10-90 percentile whiskers and
histograms. Coordinates are written with four decimals so output is
byte-stable for identical inputs."""

from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=60, right=20, top=40, bottom=70)


def _f(v) -> str:
    return f"{float(v):.4f}"


def _esc(text) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axis_range(values):
    finite = [v for v in values if np.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _frame(title, ylabel, lo, hi):
    x0, y0 = MARGIN["left"], HEIGHT - MARGIN["bottom"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN["right"]}" y2="{y0}" stroke="black"/>',
        f'<text x="14" y="{HEIGHT / 2}" transform="rotate(-90 14 {HEIGHT / 2})" '
        f'text-anchor="middle">{_esc(ylabel)}</text>',
    ]
    for tick in np.linspace(lo, hi, 5):
        y = _y(tick, lo, hi)
        parts.append(f'<line x1="{x0 - 4}" y1="{_f(y)}" x2="{x0}" y2="{_f(y)}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 6}" y="{_f(y + 4)}" text-anchor="end">{tick:.3g}</text>')
    return parts


def _y(v, lo, hi):
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    return bottom - (v - lo) / (hi - lo) * (bottom - top)


def boxplot_svg(groups: dict, title: str = "", ylabel: str = "") -> str:
    """Box plot of each group in insertion order: box from the 25th to the
    75th percentile, a line at the median, whiskers at the 10th and 90th.
    Empty groups get a label and no box."""
    stats = {}
    for name, values in groups.items():
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        stats[name] = np.percentile(v, [10, 25, 50, 75, 90]) if v.size else None
    lo, hi = _axis_range([x for s in stats.values() if s is not None for x in s])
    parts = _frame(title, ylabel, lo, hi)
    n = max(len(stats), 1)
    slot = (WIDTH - MARGIN["left"] - MARGIN["right"]) / n
    half = min(0.3 * slot, 25.0)
    for i, (name, s) in enumerate(stats.items()):
        cx = MARGIN["left"] + (i + 0.5) * slot
        label_y = HEIGHT - MARGIN["bottom"] + 14
        parts.append(f'<text x="{_f(cx)}" y="{label_y}" text-anchor="end" '
                     f'transform="rotate(-35 {_f(cx)} {label_y})">{_esc(name)}</text>')
        if s is None:
            continue
        p10, p25, p50, p75, p90 = (_y(v, lo, hi) for v in s)
        parts += [
            f'<line x1="{_f(cx)}" y1="{_f(p90)}" x2="{_f(cx)}" y2="{_f(p75)}" stroke="black"/>',
            f'<line x1="{_f(cx)}" y1="{_f(p25)}" x2="{_f(cx)}" y2="{_f(p10)}" stroke="black"/>',
            f'<line x1="{_f(cx - half / 2)}" y1="{_f(p90)}" x2="{_f(cx + half / 2)}" y2="{_f(p90)}" stroke="black"/>',
            f'<line x1="{_f(cx - half / 2)}" y1="{_f(p10)}" x2="{_f(cx + half / 2)}" y2="{_f(p10)}" stroke="black"/>',
            f'<rect x="{_f(cx - half)}" y="{_f(p75)}" width="{_f(2 * half)}" height="{_f(p25 - p75)}" '
            f'fill="#9ecae1" stroke="black"/>',
            f'<line x1="{_f(cx - half)}" y1="{_f(p50)}" x2="{_f(cx + half)}" y2="{_f(p50)}" '
            f'stroke="black" stroke-width="2"/>',
        ]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(values, bins: int = 30, title: str = "", xlabel: str = "") -> str:
    """Histogram of ``values`` with equal-width bins."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size:
        lo_x, hi_x = (v.min(), v.max()) if v.max() > v.min() else (v.min() - 0.5, v.max() + 0.5)
        counts, edges = np.histogram(v, bins=bins, range=(lo_x, hi_x))
    else:
        counts, edges = np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1)
    top = max(int(counts.max()), 1)
    parts = _frame(title, "count", 0.0, float(top))
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    span = edges[-1] - edges[0]
    sx = lambda x: left + (x - edges[0]) / span * (right - left)  # noqa: E731
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        if c == 0:
            continue
        y = _y(c, 0.0, float(top))
        parts.append(f'<rect x="{_f(sx(a))}" y="{_f(y)}" width="{_f(sx(b) - sx(a))}" '
                     f'height="{_f(HEIGHT - MARGIN["bottom"] - y)}" fill="#9ecae1" stroke="black"/>')
    base = HEIGHT - MARGIN["bottom"]
    for x in np.linspace(edges[0], edges[-1], 5):
        parts.append(f'<text x="{_f(sx(x))}" y="{base + 16}" text-anchor="middle">{x:.3g}</text>')
    parts.append(f'<text x="{(left + right) / 2}" y="{base + 40}" text-anchor="middle">{_esc(xlabel)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, svg: str) -> None:
    Path(path).write_text(svg)
