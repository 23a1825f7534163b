"""Minimal deterministic SVG line plots."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    points: list
    color: str = "#1f77b4"
    width: float = 1.5
    markers: bool = False
    dash: str = ""


@dataclass
class Plot:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    bands: list = field(default_factory=list)  # (y0, y1) horizontal shading
    xticks: Sequence = ()                       # (x, label)
    width: int = 640
    height: int = 420


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render(plot: Plot) -> str:
    left, right, top, bottom = 60, 20, 30, 45
    pw = plot.width - left - right
    ph = plot.height - top - bottom
    xs = [p[0] for s in plot.series for p in s.points] + [t[0] for t in plot.xticks]
    ys = [p[1] for s in plot.series for p in s.points] + [v for b in plot.bands for v in b]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def X(x):
        return left + (x - x0) / (x1 - x0) * pw

    def Y(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{plot.width}" height="{plot.height}" '
           f'viewBox="0 0 {plot.width} {plot.height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{plot.width}" height="{plot.height}" fill="white"/>']
    for b0, b1 in plot.bands:
        out.append(f'<rect x="{_fmt(left)}" y="{_fmt(Y(b1))}" width="{_fmt(pw)}" '
                   f'height="{_fmt(Y(b0) - Y(b1))}" fill="#dddddd"/>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for x, label in plot.xticks:
        out.append(f'<line x1="{_fmt(X(x))}" y1="{top}" x2="{_fmt(X(x))}" y2="{top + ph}" '
                   f'stroke="#bbbbbb" stroke-width="0.5"/>')
        out.append(f'<text x="{_fmt(X(x))}" y="{top + ph + 14}" text-anchor="middle">{escape(label)}</text>')
    for k in range(5):
        y = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{left - 4}" y="{_fmt(Y(y) + 4)}" text-anchor="end">{y:.4g}</text>')
    for s in plot.series:
        if not s.points:
            continue
        pts = " ".join(f"{_fmt(X(x))},{_fmt(Y(y))}" for x, y in s.points)
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" '
                   f'stroke-width="{s.width}"{dash}/>')
        if s.markers:
            out += [f'<circle cx="{_fmt(X(x))}" cy="{_fmt(Y(y))}" r="2.5" fill="{s.color}"/>'
                    for x, y in s.points]
    out.append(f'<text x="{plot.width / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
               f'{escape(plot.title)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{plot.height - 8}" text-anchor="middle">'
               f'{escape(plot.xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(plot.ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
