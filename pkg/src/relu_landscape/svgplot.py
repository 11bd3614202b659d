"""Tiny SVG line/histogram/scatter renderer; no plotting library involved."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"]


class Figure:
    def __init__(self, title: str = "", width: int = 640, height: int = 400,
                 xlabel: str = "", ylabel: str = "", logy: bool = False):
        self.title, self.width, self.height = title, width, height
        self.xlabel, self.ylabel, self.logy = xlabel, ylabel, logy
        self.margin = (60, 20, 40, 50)  # left, right, top, bottom
        self._items = []

    def line(self, x, y, color=None, width=1.5, label=None):
        self._items.append(("line", np.asarray(x, float), np.asarray(y, float), color, width, label))
        return self

    def band(self, x, lo, hi, color=None, label=None):
        self._items.append(("band", np.asarray(x, float), (np.asarray(lo, float), np.asarray(hi, float)),
                            color, 0, label))
        return self

    def scatter(self, x, y, color=None, r=2.0, label=None):
        self._items.append(("scatter", np.asarray(x, float), np.asarray(y, float), color, r, label))
        return self

    def hist(self, edges, counts, color=None, label=None):
        self._items.append(("hist", np.asarray(edges, float), np.asarray(counts, float), color, 0, label))
        return self

    def _tr(self, v):
        v = np.asarray(v, float)
        if self.logy:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.log10(np.where(v > 0, v, np.nan))
        return v

    def _bounds(self):
        xs, ys = [], []
        for kind, x, y, *_ in self._items:
            if kind == "hist":
                xs += [x.min(), x.max()]
                ys += [0.0, float(np.max(y))]
            elif kind == "band":
                xs += [np.nanmin(x), np.nanmax(x)]
                ys += [np.nanmin(self._tr(y[0])), np.nanmax(self._tr(y[1]))]
            else:
                ty = self._tr(y)
                if np.any(np.isfinite(ty)):
                    xs += [np.nanmin(x), np.nanmax(x)]
                    ys += [np.nanmin(ty), np.nanmax(ty)]
        xs = [v for v in xs if math.isfinite(v)] or [0.0, 1.0]
        ys = [v for v in ys if math.isfinite(v)] or [0.0, 1.0]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0
        pad = 0.04 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        W, H = self.width, self.height
        ml, mr, mt, mb = self.margin
        x0, x1, y0, y1 = self._bounds()

        def px(x):
            return ml + (np.asarray(x, float) - x0) / (x1 - x0) * (W - ml - mr)

        def py(y):
            return H - mb - (np.asarray(y, float) - y0) / (y1 - y0) * (H - mt - mb)

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
               f'font-family="sans-serif" font-size="11">',
               f'<rect width="{W}" height="{H}" fill="white"/>']
        for k, (kind, x, y, color, width, label) in enumerate(self._items):
            c = color or COLORS[k % len(COLORS)]
            if kind == "line":
                ty = self._tr(y)
                ok = np.isfinite(ty) & np.isfinite(x)
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x[ok]), py(ty[ok])))
                out.append(f'<polyline fill="none" stroke="{c}" stroke-width="{width}" points="{pts}"/>')
            elif kind == "band":
                lo, hi = self._tr(y[0]), self._tr(y[1])
                pts = list(zip(px(x), py(hi))) + list(zip(px(x[::-1]), py(lo[::-1])))
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts if math.isfinite(b))
                out.append(f'<polygon fill="{c}" fill-opacity="0.25" stroke="none" points="{pts}"/>')
            elif kind == "scatter":
                ty = self._tr(y)
                for a, b in zip(px(x), py(ty)):
                    if math.isfinite(b):
                        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{width}" fill="{c}" fill-opacity="0.6"/>')
            elif kind == "hist":
                base = py(0.0)
                for a, b, n in zip(x[:-1], x[1:], y):
                    top = py(n)
                    out.append(f'<rect x="{px(a):.2f}" y="{top:.2f}" width="{max(px(b) - px(a), 0.5):.2f}" '
                               f'height="{max(base - top, 0):.2f}" fill="{c}" fill-opacity="0.6"/>')
            if label:
                out.append(f'<text x="{W - mr - 150}" y="{mt + 14 * (k + 1)}" fill="{c}">{escape(label)}</text>')
        # axes and ticks
        out.append(f'<line x1="{ml}" y1="{H - mb}" x2="{W - mr}" y2="{H - mb}" stroke="black"/>')
        out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{H - mb}" stroke="black"/>')
        for t in np.linspace(x0, x1, 5):
            out.append(f'<text x="{px(t):.1f}" y="{H - mb + 14}" text-anchor="middle">{_fmt(t)}</text>')
        for t in np.linspace(y0, y1, 5):
            lab = _fmt(10 ** t) if self.logy else _fmt(t)
            out.append(f'<text x="{ml - 4}" y="{py(t):.1f}" text-anchor="end">{lab}</text>')
        if self.title:
            out.append(f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{(ml + W - mr) / 2}" y="{H - 8}" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            out.append(f'<text x="12" y="{(mt + H - mb) / 2}" text-anchor="middle" '
                       f'transform="rotate(-90 12 {(mt + H - mb) / 2})">{escape(self.ylabel)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.render())


def _fmt(v: float) -> str:
    if v == 0 or not math.isfinite(v):
        return "0" if v == 0 else ""
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"
