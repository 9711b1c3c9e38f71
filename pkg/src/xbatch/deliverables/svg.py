"""Deterministic SVG rendering of plot documents.

Output depends only on the document: fixed canvas size, fixed palette, and
coordinates printed with two decimals.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .document import MatrixPayload, PlotDocument

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
# viridis anchors
RAMP = ((68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37))


def _f(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


def _color(t: float) -> str:
    if math.isnan(t):
        return "#cccccc"
    t = min(max(t, 0.0), 1.0) * (len(RAMP) - 1)
    i = min(int(t), len(RAMP) - 2)
    frac = t - i
    rgb = [round(a + (b - a) * frac) for a, b in zip(RAMP[i], RAMP[i + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _text(x, y, s, size=12, anchor="middle", extra=""):
    return f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>'


def _finite(vals) -> list[float]:
    return [float(v) for v in vals if v is not None and not isinstance(v, str) and math.isfinite(float(v))]


def _transform(scale: str):
    if scale == "log2":
        return lambda v: math.log2(v) if v > 0 else math.nan
    if scale == "log10":
        return lambda v: math.log10(v) if v > 0 else math.nan
    return lambda v: v


def _range(vals: list[float]) -> tuple[float, float]:
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if lo == hi:
        pad = abs(lo) * 0.1 or 0.5
        return lo - pad, hi + pad
    return lo, hi


def _linegraph(doc: PlotDocument) -> list[str]:
    out = []
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    categorical = any(isinstance(v, str) for s in doc.series for v in s.x)
    cats: list[str] = []
    if categorical:
        for s in doc.series:
            for v in s.x:
                if str(v) not in cats:
                    cats.append(str(v))
    tx = _transform("linear" if categorical else doc.x_axis.scale)
    ty = _transform(doc.y_axis.scale)

    def xval(v):
        return float(cats.index(str(v))) if categorical else tx(float(v))

    xs = [xval(v) for s in doc.series for v in s.x]
    ys = []
    for s in doc.series:
        for arr in (s.y, s.band_lo, s.band_hi, s.whisker_lo, s.whisker_hi):
            if arr is not None:
                ys.extend(ty(v) for v in _finite(arr))
    x0, x1 = _range(_finite(xs))
    y0, y1 = _range(_finite(ys))

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + ph - (v - y0) / (y1 - y0) * ph

    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>')
    for k in range(5):
        v = y0 + (y1 - y0) * k / 4
        lab = 2**v if doc.y_axis.scale == "log2" else 10**v if doc.y_axis.scale == "log10" else v
        out.append(f'<line x1="{LEFT - 4}" y1="{_f(py(v))}" x2="{LEFT}" y2="{_f(py(v))}" stroke="#000"/>')
        out.append(_text(LEFT - 7, py(v) + 4, _tick_label(lab), 10, "end"))
    if categorical:
        xticks = [(float(i), c) for i, c in enumerate(cats)]
    elif doc.x_axis.scale in ("log2", "log10"):
        raw = sorted(set(_finite(v for s in doc.series for v in s.x)))
        xticks = [(tx(v), _tick_label(v)) for v in raw if v > 0]
    else:
        xticks = [(x0 + (x1 - x0) * k / 4, _tick_label(x0 + (x1 - x0) * k / 4)) for k in range(5)]
    for v, lab in xticks:
        out.append(f'<line x1="{_f(px(v))}" y1="{TOP + ph}" x2="{_f(px(v))}" y2="{TOP + ph + 4}" stroke="#000"/>')
        out.append(_text(px(v), TOP + ph + 16, lab, 10))

    for k, s in enumerate(doc.series):
        color = PALETTE[k % len(PALETTE)]
        pts = [(xval(x), ty(float(y))) for x, y in zip(s.x, s.y) if y is not None and math.isfinite(float(y))]
        if s.band_lo is not None and s.band_hi is not None:
            upper, lower = [], []
            for x, lo, hi in zip(s.x, s.band_lo, s.band_hi):
                if all(v is not None and math.isfinite(float(v)) for v in (lo, hi)):
                    upper.append(f"{_f(px(xval(x)))},{_f(py(ty(float(hi))))}")
                    lower.append(f"{_f(px(xval(x)))},{_f(py(ty(float(lo))))}")
            if upper:
                poly = " ".join(upper + lower[::-1])
                out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        if s.whisker_lo is not None and s.whisker_hi is not None:
            for x, lo, hi in zip(s.x, s.whisker_lo, s.whisker_hi):
                if all(v is not None and math.isfinite(float(v)) for v in (lo, hi)):
                    xx = _f(px(xval(x)))
                    out.append(
                        f'<line x1="{xx}" y1="{_f(py(ty(float(lo))))}" x2="{xx}" y2="{_f(py(ty(float(hi))))}" '
                        f'stroke="{color}" stroke-width="1"/>'
                    )
        dash = ' stroke-dasharray="6,4"' if s.style.get("dash") else ""
        if pts:
            path = " ".join(f"{_f(px(a))},{_f(py(b))}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
            for a, b in pts:
                out.append(f'<circle cx="{_f(px(a))}" cy="{_f(py(b))}" r="2.5" fill="{color}"/>')
        ly = TOP + 14 + 16 * k
        out.append(f'<line x1="{W - RIGHT - 150}" y1="{ly - 4}" x2="{W - RIGHT - 130}" y2="{ly - 4}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(_text(W - RIGHT - 125, ly, s.label, 11, "start"))

    out.append(_text(LEFT + pw / 2, H - 12, doc.x_axis.label, 12))
    out.append(_text(16, TOP + ph / 2, doc.y_axis.label, 12, "middle", f' transform="rotate(-90 16 {_f(TOP + ph / 2)})"'))
    return out


def _heatmap_panel(m: MatrixPayload, x: float, y: float, w: float, h: float, lo: float, hi: float,
                   show_title: bool = True) -> list[str]:
    out = []
    cw, ch = w / m.cols, h / m.rows
    arr = m.array()
    span = (hi - lo) or 1.0
    for r in range(m.rows):
        for c in range(m.cols):
            v = arr[r, c]
            t = math.nan if math.isnan(v) else (v - lo) / span
            out.append(
                f'<rect x="{_f(x + c * cw)}" y="{_f(y + r * ch)}" width="{_f(cw)}" height="{_f(ch)}" fill="{_color(t)}"/>'
            )
    step_c = max(1, m.cols // 12)
    step_r = max(1, m.rows // 12)
    for c in range(0, m.cols, step_c):
        out.append(_text(x + (c + 0.5) * cw, y + h + 14, m.col_labels[c], 9))
    for r in range(0, m.rows, step_r):
        out.append(_text(x - 4, y + (r + 0.5) * ch + 3, m.row_labels[r], 9, "end"))
    if m.title and show_title:
        out.append(_text(x + w / 2, y - 6, m.title, 11))
    return out


def _heatmaps(doc: PlotDocument) -> list[str]:
    out = []
    mats = doc.matrices
    vals = np.concatenate([m.array().ravel() for m in mats]) if mats else np.array([])
    vals = vals[np.isfinite(vals)]
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    bar_w = 50
    n = max(len(mats), 1)
    gap = 30
    pw = (W - LEFT - RIGHT - bar_w - gap * (n - 1)) / n
    ph = H - TOP - BOTTOM
    for k, m in enumerate(mats):
        # a lone panel titled like the document needs no second caption
        show = not (len(mats) == 1 and m.title == doc.title)
        out.extend(_heatmap_panel(m, LEFT + k * (pw + gap), TOP, pw, ph, lo, hi, show))
    # colorbar
    bx = W - RIGHT - bar_w + 15
    steps = 20
    for s in range(steps):
        t = 1 - s / (steps - 1)
        out.append(f'<rect x="{bx}" y="{_f(TOP + s * ph / steps)}" width="12" height="{_f(ph / steps + 0.5)}" fill="{_color(t)}"/>')
    out.append(_text(bx + 14, TOP + 8, _tick_label(hi), 9, "start"))
    out.append(_text(bx + 14, TOP + ph, _tick_label(lo), 9, "start"))
    out.append(_text(LEFT + (W - LEFT - RIGHT - bar_w) / 2, H - 12, doc.x_axis.label, 12))
    out.append(_text(16, TOP + ph / 2, doc.y_axis.label, 12, "middle", f' transform="rotate(-90 16 {_f(TOP + ph / 2)})"'))
    return out


def render_plot(doc: PlotDocument) -> str:
    body = _linegraph(doc) if doc.kind == "linegraph" else _heatmaps(doc)
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
    ]
    if doc.title:
        head.append(_text(W / 2, 22, doc.title, 14))
    return "\n".join(head + body + ["</svg>"]) + "\n"
