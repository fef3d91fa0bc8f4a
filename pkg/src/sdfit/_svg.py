"""Tiny self-contained SVG writer for contours and line plots."""

from __future__ import annotations

import numpy as np


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class SvgCanvas:
    """Accumulates SVG elements in a user coordinate frame with y flipped up."""

    def __init__(self, xlim, ylim, size=640, margin=24):
        self.xlim = (float(xlim[0]), float(xlim[1]))
        self.ylim = (float(ylim[0]), float(ylim[1]))
        self.size = size
        self.margin = margin
        spanx = self.xlim[1] - self.xlim[0]
        spany = self.ylim[1] - self.ylim[0]
        inner = size - 2 * margin
        self._sx = inner / spanx
        self._sy = inner / spany
        self.height = size
        self.elements: list[str] = []

    def _map(self, x, y):
        px = self.margin + (x - self.xlim[0]) * self._sx
        py = self.size - self.margin - (y - self.ylim[0]) * self._sy
        return px, py

    def polyline(self, pts, color="#1f6f8b", width=1.5, opacity=1.0):
        pts = np.asarray(pts, dtype=float)
        mapped = " ".join(
            f"{_fmt(px)},{_fmt(py)}" for px, py in (self._map(x, y) for x, y in pts)
        )
        self.elements.append(
            f'<polyline points="{mapped}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}" />'
        )

    def segments(self, segs, color="#1f6f8b", width=1.5):
        for (x0, y0), (x1, y1) in np.asarray(segs, dtype=float):
            a = self._map(x0, y0)
            b = self._map(x1, y1)
            self.elements.append(
                f'<line x1="{_fmt(a[0])}" y1="{_fmt(a[1])}" x2="{_fmt(b[0])}" '
                f'y2="{_fmt(b[1])}" stroke="{color}" stroke-width="{width}" />'
            )

    def scatter(self, pts, color="#d1495b", radius=2.0, opacity=0.9):
        for x, y in np.asarray(pts, dtype=float):
            px, py = self._map(x, y)
            self.elements.append(
                f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{radius}" '
                f'fill="{color}" fill-opacity="{opacity}" />'
            )

    def errorbars(self, xs, ys, half_widths, color="#444444", width=1.0):
        for x, y, hw in zip(xs, ys, half_widths):
            a = self._map(x, y - hw)
            b = self._map(x, y + hw)
            self.elements.append(
                f'<line x1="{_fmt(a[0])}" y1="{_fmt(a[1])}" x2="{_fmt(b[0])}" '
                f'y2="{_fmt(b[1])}" stroke="{color}" stroke-width="{width}" />'
            )

    def text(self, x, y, label, size=12, color="#222222", anchor="start"):
        px, py = self._map(x, y)
        self.elements.append(
            f'<text x="{_fmt(px)}" y="{_fmt(py)}" font-size="{size}" '
            f'fill="{color}" text-anchor="{anchor}" '
            f'font-family="sans-serif">{label}</text>'
        )

    def hline(self, y, color="#999999", width=0.8, dash="4 3"):
        a = self._map(self.xlim[0], y)
        b = self._map(self.xlim[1], y)
        self.elements.append(
            f'<line x1="{_fmt(a[0])}" y1="{_fmt(a[1])}" x2="{_fmt(b[0])}" '
            f'y2="{_fmt(b[1])}" stroke="{color}" stroke-width="{width}" '
            f'stroke-dasharray="{dash}" />'
        )

    def frame(self):
        m = self.margin
        s = self.size
        self.elements.insert(
            0,
            f'<rect x="{m}" y="{m}" width="{s - 2 * m}" height="{s - 2 * m}" '
            'fill="none" stroke="#cccccc" stroke-width="1" />',
        )

    def to_string(self) -> str:
        body = "\n".join(self.elements)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" '
            f'height="{self.size}" viewBox="0 0 {self.size} {self.size}">\n'
            f'<rect width="100%" height="100%" fill="white" />\n{body}\n</svg>\n'
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_string())
