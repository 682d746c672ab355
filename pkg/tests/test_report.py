import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import make_record
from dropzoom.report import (COOL, WARM, HeatmapSpec, color_for, emit_curve_plot, emit_grid_csv,
                             emit_heatmap_svg, emit_linear_fit_plot, emit_scatter_csv, ledger_grid)
from dropzoom.sampler import SearchSpace
from dropzoom.surrogates import LinearModel, SurfaceGrid, grid_axes

SVG = "{http://www.w3.org/2000/svg}"


def _grid(n=6, region=SearchSpace()):
    lu, dr = grid_axes(region, n)
    values = np.add.outer(np.arange(n), np.arange(n)).astype(float)
    return SurfaceGrid(region, lu, dr, values)


def _records():
    return [make_record(i, u, d, c) for i, (u, d, c) in
            enumerate([(8, 0.1, 0.5), (64, 0.3, 0.05), (512, 0.9, 0.7), (100, 0.0, 0.2)])]


def test_color_endpoints_and_clamping():
    assert color_for(0.0, 0.0, 1.0) == "#%02x%02x%02x" % COOL
    assert color_for(1.0, 0.0, 1.0) == "#%02x%02x%02x" % WARM
    assert color_for(5.0, 0.0, 1.0) == color_for(1.0, 0.0, 1.0)
    assert color_for(0.3, 1.0, 1.0) == color_for(0.0, 0.0, 1.0)


def test_heatmap_is_well_formed_with_one_rect_per_cell(tmp_path):
    path = emit_heatmap_svg(HeatmapSpec(_grid(), title="t & <x>"), tmp_path / "h.svg", overlay=_records())
    root = ET.parse(path).getroot()
    assert root.tag == SVG + "svg"
    rects = root.findall(f".//{SVG}rect")
    # 36 cells + 32 colour-bar steps (+ optional background)
    assert len([r for r in rects if r.get("stroke") is None]) >= 36 + 32
    assert len(root.findall(f".//{SVG}circle")) == 4
    texts = [t.text for t in root.iter(SVG + "text")]
    assert "t & <x>" in texts
    assert any(t and t.startswith("2") for t in texts)


def test_heatmap_cells_tile_the_plot(tmp_path):
    path = emit_heatmap_svg(HeatmapSpec(_grid(4)), tmp_path / "h.svg")
    rects = ET.parse(path).getroot().findall(f".//{SVG}rect")
    # rects[0] is the page background; the next 16 are the lattice cells
    cells = [tuple(float(r.get(k)) for k in ("x", "y", "width", "height")) for r in rects[1:17]]
    x0, y0 = min(c[0] for c in cells), min(c[1] for c in cells)
    x1, y1 = max(c[0] + c[2] for c in cells), max(c[1] + c[3] for c in cells)
    area = sum(c[2] * c[3] for c in cells)
    assert area == pytest.approx((x1 - x0) * (y1 - y0), rel=1e-3)
    fills = {r.get("fill") for r in rects[1:17]}
    assert "#%02x%02x%02x" % COOL in fills and "#%02x%02x%02x" % WARM in fills


def test_heatmap_rejects_bad_grids():
    g = _grid()
    with pytest.raises(ValueError):
        HeatmapSpec(SurfaceGrid(g.region, g.log2_units, g.dropout, g.values[:3]))
    bad = g.values.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        HeatmapSpec(SurfaceGrid(g.region, g.log2_units, g.dropout, bad))


def test_svg_output_is_deterministic(tmp_path):
    spec = HeatmapSpec(_grid(), title="same")
    a = emit_heatmap_svg(spec, tmp_path / "a.svg", overlay=_records())
    b = emit_heatmap_svg(spec, tmp_path / "b.svg", overlay=_records())
    assert a.read_bytes() == b.read_bytes()


def test_scatter_csv_round_trips_values(tmp_path):
    recs = _records()
    path = emit_scatter_csv(recs, tmp_path / "s.csv")
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["units", "dropout", "cost", "accuracy"]
    assert [float(r["cost"]) for r in rows] == [r.cost for r in recs]
    with pytest.raises(ValueError):
        emit_scatter_csv([], tmp_path / "empty.csv")


def test_grid_csv(tmp_path):
    grid = _grid(3)
    rows = list(csv.reader(emit_grid_csv(grid, tmp_path / "g.csv", "cost").open()))
    assert rows[0] == ["log2_units", "units", "dropout", "cost"]
    assert len(rows) == 10
    assert rows[1][:2] == ["3.0", "8"]


def test_ledger_grid_is_nearest_trial():
    recs = _records()
    grid = ledger_grid(recs, "cost", SearchSpace(), 8)
    assert grid.values.shape == (8, 8)
    assert set(np.unique(grid.values)) <= {r.cost for r in recs}
    assert grid.values[0, 0] == 0.5  # corner (8 units, dropout 0) is nearest the (8, 0.1) trial


def test_line_plots_are_well_formed(tmp_path):
    model = LinearModel(0.05, 0.0, 0.1, 4)
    p = emit_linear_fit_plot(_records(), model, tmp_path / "lin.svg", title="fit")
    root = ET.parse(p).getroot()
    assert root.findall(f".//{SVG}polyline")
    q = emit_curve_plot([(3.0, 0.1), (9.0, 0.8)], [(3.0, 0.2), (10.0, 0.4)], tmp_path / "c.svg", title="curve")
    ET.parse(q)
