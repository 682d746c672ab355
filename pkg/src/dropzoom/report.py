"""CSV and standalone SVG output for ledgers and surrogate surfaces.

Heatmaps put log2(hidden units) on the horizontal axis and dropout rate on
the vertical axis (0 at the bottom). Colours run linearly in RGB from a cool
blue at the grid minimum to a warm red at the maximum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .harness import TrialRecord, completed, normalized_units
from .sampler import SearchSpace
from .surrogates import LinearModel, SurfaceGrid

COOL = (59, 76, 192)
WARM = (180, 4, 38)

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 110, 40, 60


@dataclass(frozen=True)
class HeatmapSpec:
    grid: SurfaceGrid
    title: str = ""
    value_label: str = "value"
    x_label: str = "hidden units (log2 scale)"
    y_label: str = "dropout rate"
    low_color: tuple[int, int, int] = COOL
    high_color: tuple[int, int, int] = WARM

    def __post_init__(self):
        v = np.asarray(self.grid.values)
        if v.shape != (len(self.grid.log2_units), len(self.grid.dropout)):
            raise ValueError(f"value grid {v.shape} does not match axes "
                             f"{len(self.grid.log2_units)}x{len(self.grid.dropout)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("heatmap values must be finite")


def color_for(value: float, vmin: float, vmax: float, low=COOL, high=WARM) -> str:
    t = 0.0 if vmax <= vmin else min(1.0, max(0.0, (value - vmin) / (vmax - vmin)))
    rgb = [int(round(a + t * (b - a))) for a, b in zip(low, high)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def emit_scatter_csv(records: Sequence[TrialRecord], path: str | Path) -> Path:
    recs = completed(list(records))
    if not recs:
        raise ValueError("no completed trials to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["units", "dropout", "cost", "accuracy"])
        for r in recs:
            w.writerow([r.point.hidden_units, repr(r.point.dropout_rate), repr(r.cost), repr(r.accuracy)])
    return path


def emit_grid_csv(grid: SurfaceGrid, path: str | Path, value_name: str = "value") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["log2_units", "units", "dropout", value_name])
        for i, lu in enumerate(grid.log2_units):
            for j, d in enumerate(grid.dropout):
                w.writerow([repr(float(lu)), int(math.floor(2.0**lu)), repr(float(d)),
                            repr(float(grid.values[i, j]))])
    return path


def ledger_grid(records: Sequence[TrialRecord], key: str, region: SearchSpace,
                resolution: int = 32) -> SurfaceGrid:
    """Nearest-trial map of ``cost`` or ``accuracy`` over a lattice, in normalized coordinates."""
    recs = completed(list(records))
    if not recs:
        raise ValueError("no completed trials")
    pts = np.column_stack([normalized_units([r.point.hidden_units for r in recs]),
                           [r.point.dropout_rate for r in recs]])
    vals = np.array([getattr(r, key) for r in recs], dtype=np.float64)
    lu = np.linspace(*region.log2_units_range, resolution)
    dr = np.linspace(*region.dropout_range, resolution)
    uu, dd = np.meshgrid((lu - 3.0) / 7.0, dr, indexing="ij")
    q = np.column_stack([uu.ravel(), dd.ravel()])
    d2 = ((q[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    return SurfaceGrid(region, lu, dr, vals[np.argmin(d2, axis=1)].reshape(uu.shape))


class _Svg:
    def __init__(self, width: int = WIDTH, height: int = HEIGHT):
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def add(self, element: str) -> None:
        self.parts.append(element)

    def rect(self, x, y, w, h, fill, extra=""):
        self.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}"{extra}/>')

    def text(self, x, y, s, anchor="middle", size=12, extra=""):
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="{size}" '
                 f'text-anchor="{anchor}"{extra}>{escape(s)}</text>')

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0):
        self.add(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                 f'stroke="{stroke}" stroke-width="{width:g}"/>')

    def circle(self, cx, cy, r, fill, stroke="#000000"):
        self.add(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:g}" fill="{fill}" stroke="{stroke}" '
                 f'stroke-width="0.5"/>')

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.parts + ["</svg>"]) + "\n", encoding="utf-8")
        return path


class _Frame:
    """Maps (log2 units, dropout) onto the plot rectangle."""

    def __init__(self, region: SearchSpace, y_range: tuple[float, float] | None = None):
        self.x0, self.x1 = region.log2_units_range
        self.y0, self.y1 = y_range or region.dropout_range
        self.left, self.top = MARGIN_L, MARGIN_T
        self.w = WIDTH - MARGIN_L - MARGIN_R
        self.h = HEIGHT - MARGIN_T - MARGIN_B

    def px(self, x: float) -> float:
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y: float) -> float:
        return self.top + (self.y1 - y) / (self.y1 - self.y0) * self.h


def _axes(svg: _Svg, frame: _Frame, title: str, x_label: str, y_label: str) -> None:
    bottom = frame.top + frame.h
    svg.add(f'<rect x="{frame.left:.2f}" y="{frame.top:.2f}" width="{frame.w:.2f}" height="{frame.h:.2f}" '
            f'fill="none" stroke="#000000" stroke-width="1"/>')
    for k in range(math.ceil(frame.x0), math.floor(frame.x1) + 1):
        x = frame.px(k)
        svg.line(x, bottom, x, bottom + 5)
        svg.text(x, bottom + 18, str(2**k))
    for y in _nice_ticks(frame.y0, frame.y1):
        py = frame.py(y)
        svg.line(frame.left - 5, py, frame.left, py)
        svg.text(frame.left - 8, py + 4, f"{y:.2f}", anchor="end")
    svg.text(frame.left + frame.w / 2, HEIGHT - 15, x_label)
    svg.text(18, frame.top + frame.h / 2, y_label,
             extra=f' transform="rotate(-90 18 {frame.top + frame.h / 2:.2f})"')
    if title:
        svg.text(frame.left + frame.w / 2, 24, title, size=14)


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + 1e-9:
        ticks.append(round(t, 10))
        t += step
    return ticks


def emit_heatmap_svg(spec: HeatmapSpec, path: str | Path,
                     overlay: Sequence[TrialRecord] | None = None) -> Path:
    """One rect per lattice cell, optional trial circles on top, octave ticks on the units axis."""
    grid = spec.grid
    values = np.asarray(grid.values, dtype=np.float64)
    vmin, vmax = float(values.min()), float(values.max())
    frame = _Frame(grid.region)
    svg = _Svg()
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            (ulo, uhi), (dlo, dhi) = grid.cell_bounds(i, j)
            x0, x1 = frame.px(ulo), frame.px(uhi)
            y0, y1 = frame.py(dhi), frame.py(dlo)
            svg.rect(x0, y0, x1 - x0, y1 - y0,
                     color_for(values[i, j], vmin, vmax, spec.low_color, spec.high_color))
    for r in completed(list(overlay or [])):
        lu = math.log2(r.point.hidden_units)
        if frame.x0 <= lu <= frame.x1 and frame.y0 <= r.point.dropout_rate <= frame.y1:
            svg.circle(frame.px(lu), frame.py(r.point.dropout_rate), 2.5, "none", "#000000")
    _axes(svg, frame, spec.title, spec.x_label, spec.y_label)
    # colour bar
    bx = frame.left + frame.w + 20
    steps = 32
    for k in range(steps):
        y0 = frame.top + frame.h * k / steps
        svg.rect(bx, y0, 16, frame.h / steps + 0.01,
                 color_for(vmax - (vmax - vmin) * (k + 0.5) / steps, vmin, vmax, spec.low_color, spec.high_color))
    svg.text(bx + 20, frame.top + 10, f"{vmax:.4g}", anchor="start")
    svg.text(bx + 20, frame.top + frame.h, f"{vmin:.4g}", anchor="start")
    svg.text(bx + 8, frame.top - 8, spec.value_label, size=11)
    return svg.write(path)


def _xy_plot(points: Sequence[tuple[float, float]], line: Sequence[tuple[float, float]],
             region: SearchSpace, path: str | Path, title: str, y_label: str = "dropout rate") -> Path:
    if not points:
        raise ValueError("plot needs at least one point")
    frame = _Frame(region)
    svg = _Svg()
    svg.add(f'<clipPath id="plot"><rect x="{frame.left:.2f}" y="{frame.top:.2f}" width="{frame.w:.2f}" '
            f'height="{frame.h:.2f}"/></clipPath>')
    for x, y in points:
        svg.circle(frame.px(x), frame.py(y), 3, "#3b4cc0", "#ffffff")
    coords = " ".join(f"{frame.px(x):.2f},{frame.py(y):.2f}" for x, y in line)
    svg.add(f'<polyline points={quoteattr(coords)} fill="none" stroke="#b40426" stroke-width="2" '
            f'clip-path="url(#plot)"/>')
    _axes(svg, frame, title, "hidden units (log2 scale)", y_label)
    return svg.write(path)


def emit_linear_fit_plot(subset: Sequence[TrialRecord], model: LinearModel, path: str | Path,
                         region: SearchSpace = SearchSpace(), title: str = "") -> Path:
    """Selected trials plus the fitted line across the region's units span."""
    recs = completed(list(subset))
    if not recs:
        raise ValueError("linear fit plot needs at least one selected trial")
    pts = [(math.log2(r.point.hidden_units), r.point.dropout_rate) for r in recs]
    lo, hi = region.log2_units_range
    line = [(x, model.slope * x + model.intercept) for x in (lo, hi)]
    return _xy_plot(pts, line, region, path, title or f"linear fit, MAE {model.mae:.4f}")


def emit_curve_plot(points: Sequence[tuple[float, float]], curve: Sequence[tuple[float, float]],
                    path: str | Path, region: SearchSpace = SearchSpace(), title: str = "") -> Path:
    """Scatter of (log2 units, dropout) with a polyline, e.g. an inverse model's dropout curve."""
    return _xy_plot(points, curve, region, path, title)
