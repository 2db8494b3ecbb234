"""Tiny native SVG line plots: polylines, confidence bands, legend.

Enough for the report figures without pulling in a plotting stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    band: Optional[tuple] = None  # (lo, hi) sequences aligned with x


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    import math

    raw = span / max(1, count - 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * span:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.4g}"


def line_plot(path, series: list[Series], title: str = "", xlabel: str = "",
              ylabel: str = "", width: int = 640, height: int = 420,
              ylim: Optional[tuple] = None) -> None:
    ml, mr, mt, mb = 62, 16, 34, 46
    pw, ph = width - ml - mr, height - mt - mb
    xs = [float(v) for s in series for v in s.x]
    ys = [float(v) for s in series for v in s.y]
    for s in series:
        if s.band is not None:
            ys.extend(float(v) for v in s.band[0])
            ys.extend(float(v) for v in s.band[1])
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = (min(ys), max(ys)) if ylim is None else ylim
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.03 * (y1 - y0)
    if ylim is None:
        y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return ml + (float(v) - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (float(v) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for t in _ticks(x0, x1):
        if x0 <= t <= x1:
            x = sx(t)
            out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" '
                       f'y2="{mt + ph}" stroke="#dddddd"/>')
            out.append(f'<text x="{x:.1f}" y="{mt + ph + 16}" '
                       f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        if y0 <= t <= y1:
            y = sy(t)
            out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" '
                       f'y2="{y:.1f}" stroke="#dddddd"/>')
            out.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" '
                       f'text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#444444"/>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if s.band is not None:
            lo, hi = s.band
            pts = [f"{sx(x):.1f},{sy(v):.1f}" for x, v in zip(s.x, hi)]
            pts += [f"{sx(x):.1f},{sy(v):.1f}"
                    for x, v in reversed(list(zip(s.x, lo)))]
            out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" '
                       f'fill-opacity="0.15" stroke="none"/>')
        pts = " ".join(f"{sx(x):.1f},{sy(v):.1f}" for x, v in zip(s.x, s.y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.6"/>')
        if s.label:
            ly = mt + 16 + 16 * i
            out.append(f'<line x1="{ml + pw - 130}" y1="{ly - 4}" '
                       f'x2="{ml + pw - 110}" y2="{ly - 4}" stroke="{color}" '
                       f'stroke-width="2"/>')
            out.append(f'<text x="{ml + pw - 104}" y="{ly}">{s.label}</text>')
    if title:
        out.append(f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
                   f'font-size="14">{title}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 10}" '
                   f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{mt + ph / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2:.0f})">{ylabel}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out) + "\n")
