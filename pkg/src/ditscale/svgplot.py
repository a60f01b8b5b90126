"""Minimal self-contained SVG line/scatter plots (no rendering dependency).

Callers hand over data series in already-transformed coordinates (e.g. log10
values) together with tick labels; this module only maps data space to pixel
space and emits SVG 1.1 markup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
           "#937860", "#da8bc3", "#8c8c8c")


def nice_ticks(lo: float, hi: float, target: int = 5):
    """Round tick positions covering [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / max(target, 1)))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= target:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * span:
        ticks.append(round(v, 12))
        v += step
    return ticks


@dataclass
class Series:
    x: list
    y: list
    label: str = ""
    color: str = ""
    kind: str = "line"  # "line" | "scatter" | "dashed"


@dataclass
class Figure:
    """One x/y panel; data coordinates are plotted as given."""

    title: str = ""
    x_label: str = ""
    y_label: str = ""
    width: int = 640
    height: int = 440
    series: list = field(default_factory=list)

    def add(self, x, y, label="", kind="line", color=""):
        s = Series(list(map(float, x)), list(map(float, y)), label, color, kind)
        self.series.append(s)
        return s

    def to_svg(self) -> str:
        ml, mr, mt, mb = 62, 16, 34, 46
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs = [v for s in self.series for v in s.x]
        ys = [v for s in self.series for v in s.y if math.isfinite(v)]
        if not xs or not ys:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        pad_x = 0.04 * (x_hi - x_lo)
        pad_y = 0.07 * (y_hi - y_lo)
        x_lo, x_hi = x_lo - pad_x, x_hi + pad_x
        y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

        def px(v):
            return ml + (v - x_lo) / (x_hi - x_lo) * pw

        def py(v):
            return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
               f'width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#333" stroke-width="1"/>']
        for tx in nice_ticks(x_lo, x_hi):
            if not x_lo <= tx <= x_hi:
                continue
            x = px(tx)
            out.append(f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" '
                       f'y2="{mt + ph + 4}" stroke="#333"/>')
            out.append(f'<text x="{x:.1f}" y="{mt + ph + 17}" font-size="11" '
                       f'text-anchor="middle" fill="#333">{tx:g}</text>')
        for ty in nice_ticks(y_lo, y_hi):
            if not y_lo <= ty <= y_hi:
                continue
            y = py(ty)
            out.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" '
                       f'stroke="#333"/>')
            out.append(f'<text x="{ml - 7}" y="{y + 4:.1f}" font-size="11" '
                       f'text-anchor="end" fill="#333">{ty:g}</text>')
        if self.title:
            out.append(f'<text x="{self.width / 2:.0f}" y="20" font-size="14" '
                       f'text-anchor="middle" fill="#111">{self.title}</text>')
        if self.x_label:
            out.append(f'<text x="{ml + pw / 2:.0f}" y="{self.height - 10}" '
                       f'font-size="12" text-anchor="middle" fill="#111">'
                       f'{self.x_label}</text>')
        if self.y_label:
            out.append(f'<text x="16" y="{mt + ph / 2:.0f}" font-size="12" '
                       f'text-anchor="middle" fill="#111" '
                       f'transform="rotate(-90 16 {mt + ph / 2:.0f})">'
                       f'{self.y_label}</text>')

        legend_y = mt + 14
        for idx, s in enumerate(self.series):
            color = s.color or PALETTE[idx % len(PALETTE)]
            pts = [(px(x), py(y)) for x, y in zip(s.x, s.y) if math.isfinite(y)]
            if not pts:
                continue
            if s.kind == "scatter":
                for x, y in pts:
                    out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3.2" '
                               f'fill="{color}" fill-opacity="0.85"/>')
            else:
                path = " ".join(f"{'M' if i == 0 else 'L'}{x:.1f},{y:.1f}"
                                for i, (x, y) in enumerate(pts))
                dash = ' stroke-dasharray="6,4"' if s.kind == "dashed" else ""
                out.append(f'<path d="{path}" fill="none" stroke="{color}" '
                           f'stroke-width="1.8"{dash}/>')
            if s.label:
                lx = ml + pw - 150
                out.append(f'<rect x="{lx}" y="{legend_y - 8}" width="10" '
                           f'height="10" fill="{color}"/>')
                out.append(f'<text x="{lx + 14}" y="{legend_y + 1}" font-size="11" '
                           f'fill="#111">{s.label}</text>')
                legend_y += 16
        out.append("</svg>")
        return "\n".join(out) + "\n"
