import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobex.errors import ConnectivityError, EmptyDomainError
from sobex.grid import Cube, DomainMask, GridSpec, mask_for_shape, rasterize, rasterize_closed
from sobex.io import read_field, read_mask, write_field, write_mask, write_pgm
from sobex.regularity import geodesic_ratio, measure_density, quasiconvexity
from sobex.shapes import Ball, Box, Polygon, load_shape


def test_cube_basics():
    q = Cube((1.0, 2.0), 0.5)
    assert q.diam == 1.0
    assert q.star().half_side == pytest.approx(0.5 * 9 / 8)
    assert q.dilate(3).center == q.center
    with pytest.raises(ValueError):
        Cube((0, 0), 0.0)


def test_cell_centres():
    g = GridSpec((0.0, -1.0), 0.25, (4, 8))
    c = g.centers().reshape(4, 8, 2)
    assert c[0, 0].tolist() == [0.125, -0.875]
    assert c[3, 7].tolist() == [0.875, 0.875]


def test_unit_square_cell_count():
    g = GridSpec((-0.25, -0.25), 1 / 8, (12, 12))
    m = rasterize(Box([0, 0], [1, 1]), g)
    assert m.open.sum() == 64
    assert m.measure == pytest.approx(1.0)


def test_closed_is_open_plus_layer():
    g = GridSpec((-2.0, -2.0), 1 / 16, (64, 64))
    m = rasterize(Ball([0, 0], 1), g)
    assert not np.any(m.open & ~m.closed)
    # independent 3x3 dilation
    pad = np.pad(m.open, 1)
    dil = np.zeros_like(m.open)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            dil |= pad[1 + dx:65 + dx, 1 + dy:65 + dy]
    assert np.array_equal(dil, m.closed)


def test_slit_disk_drops_slit_row():
    m = mask_for_shape("slit_disk", 1 / 32)
    c = m.grid.centers().reshape(m.grid.shape + (2,))
    on_slit = (np.abs(c[..., 1]) < 1e-12) & (c[..., 0] >= 0) & (c[..., 0] < 1)
    assert on_slit.sum() == 32
    assert not m.open[on_slit].any()
    assert m.closed[on_slit].all()


def test_empty_intersection_raises():
    shape = load_shape({"op": "intersection", "args": [
        {"prim": "box", "lo": [0, 0], "hi": [1, 1]}, {"prim": "box", "lo": [2, 2], "hi": [3, 3]}]})
    with pytest.raises(EmptyDomainError):
        rasterize(shape, GridSpec((0, 0), 0.25, (16, 16)))


def test_shape_json_roundtrip():
    doc = {"op": "difference", "args": [{"prim": "ball", "c": [0, 0], "r": 1},
                                        {"prim": "box", "lo": [0, -0.01], "hi": [1, 0.01]}]}
    s = load_shape(doc)
    assert s.to_dict() == doc
    pts = np.array([[0.5, 0.0], [0.5, 0.5], [-0.5, 0.0], [2, 0]])
    assert s.contains(pts).tolist() == [False, True, True, False]


@pytest.mark.parametrize("h", [1 / 32, 1 / 64])
def test_density_full_square_boundary_bracket(h):
    m = mask_for_shape("unit_square", h)
    rep = measure_density(m, 0.25, 400, seed=3, which="open")
    ratios = [r for _, r in rep.samples]
    assert min(ratios) >= 1.0
    # a corner-centred cube keeps a quarter of its cells (plus one row/column)
    assert max(ratios) <= 4.0


def test_density_interval_interior_is_one():
    g = GridSpec((-0.5,), 1 / 64, (128,))
    m = rasterize(Box([0], [1]), g)
    rep = measure_density(m, 0.125, 50, seed=0, which="open")
    for cube, ratio in rep.samples:
        if 0 < cube.center[0] - cube.half_side and cube.center[0] + cube.half_side < 1:
            assert ratio == 1.0


def test_density_cusp_grows():
    xs = np.linspace(1, 0, 200)
    cusp = Polygon(np.vstack([[[0, 0], [1, 0]], np.c_[xs, xs ** 4]]))
    values = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        n = int(1.25 / h)
        m = rasterize(cusp, GridSpec((-0.125, -0.125), h, (n, n)))
        values.append(measure_density(m, 0.25, 2000, seed=0).C_A)
    assert values[0] < values[1] < values[2]


def test_density_curve_monotone():
    m = mask_for_shape("unit_disk", 1 / 32)
    curve = measure_density(m, 0.5, 100, seed=1).curve()
    vals = [curve[d] for d in sorted(curve)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_quasiconvexity_convex_domain():
    m = mask_for_shape("unit_disk", 1 / 64)
    rep = quasiconvexity(m, 0.25, 40, seed=2)
    assert 1.0 <= rep.C_q <= 1.1
    for x, y, length, straight in rep.witness_pairs:
        assert length >= straight * (1 - 1e-12) - 2 / 64


@pytest.mark.parametrize("k", [2, 4])
def test_slit_geodesic_ratio(k):
    h = 1 / 64
    m = mask_for_shape("slit_disk", h)
    delta = k * h
    ratio = geodesic_ratio(m, (0.5, delta), (0.5, -delta))
    # the path has to round the tip at the origin
    assert ratio >= 1 / (2 * delta) - 2


def test_same_cell_ratio_one():
    m = mask_for_shape("unit_square", 1 / 16)
    assert geodesic_ratio(m, (0.51, 0.51), (0.52, 0.53)) == 1.0


def test_disconnected_pair_raises():
    shape = load_shape({"op": "union", "args": [
        {"prim": "box", "lo": [0, 0], "hi": [1, 1]}, {"prim": "box", "lo": [2, 0], "hi": [3, 1]}]})
    m = rasterize(shape, GridSpec((-0.5, -0.5), 1 / 8, (32, 16)))
    with pytest.raises(ConnectivityError):
        geodesic_ratio(m, (0.5, 0.5), (2.5, 0.5))


def test_mask_and_field_io(tmp_path):
    m = mask_for_shape("unit_disk", 1 / 16)
    write_mask(tmp_path / "m.msk", m)
    back = read_mask(tmp_path / "m.msk")
    assert back.grid == m.grid
    assert np.array_equal(back.open, m.open) and np.array_equal(back.closed, m.closed)
    vals = np.arange(m.grid.n_cells, dtype=float).reshape(m.grid.shape) / 7
    write_field(tmp_path / "f.fld", (m.grid, vals))
    g, v, split = read_field(tmp_path / "f.fld")
    assert g == m.grid and split is None
    assert np.array_equal(v, vals)
    write_pgm(tmp_path / "m.pgm", m)
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5")


def test_mask_file_header(tmp_path):
    g = GridSpec((0.0, 0.0), 0.5, (2, 3))
    m = DomainMask.from_open(g, np.array([[1, 0, 0], [0, 0, 0]], bool))
    write_mask(tmp_path / "m.msk", m)
    raw = (tmp_path / "m.msk").read_bytes()
    assert raw[:8] == b"SOBEXMSK"
    assert raw[-6:] == bytes([2, 1, 0, 1, 1, 0])


@settings(max_examples=25, deadline=None)
@given(lo=st.tuples(st.floats(-1, 0), st.floats(-1, 0)),
       size=st.tuples(st.floats(0.3, 1.5), st.floats(0.3, 1.5)))
def test_box_measure_refines(lo, size):
    box = Box(list(lo), [lo[0] + size[0], lo[1] + size[1]])
    exact = size[0] * size[1]
    perim = 2 * (size[0] + size[1])
    for h in (1 / 16, 1 / 32):
        n = int(4 / h)
        m = rasterize(box, GridSpec((-2.0, -2.0), h, (n, n)))
        assert abs(m.measure - exact) <= perim * h


def test_closed_rasterisation_of_point():
    g = GridSpec((-1.0, -1.0), 0.25, (8, 8))
    m = rasterize_closed(load_shape("point"), g)
    assert m.closed.sum() == 4 and m.open.sum() == 0
    assert math.isclose(m.bounding_cube().half_side, 0.25)
