import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobex.errors import ShapeMismatchError
from sobex.experiments import interval_extension
from sobex.extension import apply
from sobex.grid import Cube, DomainMask, GridSpec
from sobex.io import read_field, write_field
from sobex.product import (
    ProductExtension, ProductField, commutation_check, extend_first_factor, extend_product,
    fiber_runs, fitted_order, fubini_gap, layer_rows, restriction_converse_check,
    x_derivative_check,
)
from sobex.suites import get_suite

H = 1 / 32


@pytest.fixture(scope="module")
def emap():
    return interval_extension(H)


def _field(emap, func):
    g, m = emap.source.grid, emap.source
    return ProductField.from_function(g, g, func, m, m)


def test_separable_field_extends_to_tensor_product(emap):
    f = lambda x: np.cos(2 * x[:, 0]) + x[:, 0] ** 2
    g = lambda y: np.exp(-y[:, 0])
    u = _field(emap, lambda x, y: f(x) * g(y))
    w = extend_product(u, emap, emap)
    grid, m = emap.source.grid, emap.source
    fx = np.where(m.open, f(grid.centers()).reshape(grid.shape), 0.0)
    gy = np.where(m.open, g(grid.centers()).reshape(grid.shape), 0.0)
    expect = np.multiply.outer(apply(emap, fx).values, apply(emap, gy).values)
    np.testing.assert_allclose(w.values, expect, rtol=1e-12, atol=1e-13)


def test_constant_reproduced_on_layer_product(emap):
    u = _field(emap, lambda x, y: np.full(len(x), 2.5))
    w = extend_product(u, emap, emap)
    layer = layer_rows(emap).reshape(emap.target.shape)
    sel = np.multiply.outer(layer, layer)
    assert sel.sum() > 0
    np.testing.assert_allclose(w.values[sel], 2.5, rtol=1e-13)


def test_restriction_to_open_product(emap):
    t = get_suite("smooth2d")[0]
    u = _field(emap, lambda x, y: t(np.hstack([x, y])))
    w = extend_product(u, emap, emap)
    off = emap.offset[0]
    n = emap.target.shape[0]
    ox = np.flatnonzero(emap.source.open)
    inside = ox[(ox - off >= 0) & (ox - off < n)]
    assert len(inside) == len(ox)
    sub = w.values[np.ix_(inside - off, inside - off)]
    assert np.array_equal(sub, u.values[np.ix_(inside, inside)])


def test_x_derivative_consistent_per_slice(emap):
    u = _field(emap, lambda x, y: np.sin(3 * x[:, 0]) * (1 + y[:, 0]))
    rep = x_derivative_check(u, emap, 0)
    assert rep["max_discrepancy"] == 0.0
    assert np.isfinite(rep["step_constant"]) and rep["step_constant"] > 0


def test_commutation_trivial_cases(emap):
    zero = _field(emap, lambda x, y: np.zeros(len(x)))
    flat = _field(emap, lambda x, y: np.sin(x[:, 0]))
    assert commutation_check(flat, zero, emap, 0)["residual"] == 0.0
    lin = _field(emap, lambda x, y: y[:, 0])
    one = _field(emap, lambda x, y: np.ones(len(x)))
    rep = commutation_check(lin, one, emap, 0)
    assert rep["residual"] < 1e-10
    assert rep["layer_cells"] > 0


def test_commutation_residual_shrinks():
    res = []
    for h in (1 / 16, 1 / 32):
        em = interval_extension(h)
        g, m = em.source.grid, em.source
        u = ProductField.from_function(g, g, lambda x, y: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * y[:, 0]), m, m)
        du = ProductField.from_function(
            g, g, lambda x, y: np.sin(np.pi * x[:, 0]) * np.pi * np.cos(np.pi * y[:, 0]), m, m)
        res.append(commutation_check(u, du, em, 0)["residual"])
    assert res[1] < res[0] / 2


def test_fitted_order_of_exact_power():
    hs = [0.1, 0.05, 0.025]
    assert fitted_order(hs, [3 * h ** 2 for h in hs]) == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=7, max_size=7), min_size=5, max_size=5),
       st.sampled_from([0, 1]))
def test_fiber_runs_partition_open_cells(bits, axis):
    op = np.array(bits, dtype=bool)
    grid = GridSpec((0.0, 0.0), 1.0, op.shape)
    mask = DomainMask.from_open(grid, op)
    cover = np.zeros(op.shape, dtype=int)
    for s in fiber_runs(mask, axis):
        for a, b in s.runs:
            assert b > a
            idx = [slice(None)] * 2
            idx[axis] = slice(a, b)
            idx[1 - axis] = s.complement_coords[0]
            line = cover[tuple(idx)]
            line += 1
            # maximal: the cells just before and after the run are closed or off-grid
            before = list(idx)
            if a > 0:
                before[axis] = a - 1
                assert not op[tuple(before)]
            if b < op.shape[axis]:
                before[axis] = b
                assert not op[tuple(before)]
    assert np.array_equal(cover, op.astype(int))


def test_stage_order_is_irrelevant(emap):
    t = get_suite("smooth2d")[2]
    u = _field(emap, lambda x, y: t(np.hstack([x, y])))
    w = extend_product(u, emap, emap)
    swapped = extend_product(u.transpose(), emap, emap).transpose()
    assert np.max(np.abs(w.values - swapped.values)) <= 1e-12 * max(1.0, np.abs(w.values).max())


def test_first_stage_keeps_columns_outside_second_factor_zero(emap):
    u = _field(emap, lambda x, y: 1 + x[:, 0] * y[:, 0])
    s1 = extend_first_factor(u, emap)
    off = ~emap.source.open
    assert np.all(s1.values[:, off] == 0.0)


def test_converse_slices_restrict(emap):
    g, m = emap.source.grid, emap.source
    ux = get_suite("smooth1d")[1]
    v = ProductField.from_function(g, g, lambda x, y: ux(x), m, m)
    w = extend_product(v, emap, emap)
    c = emap.target.centers()[:, 0]
    ball = (np.abs(c - 0.5) < 0.25).reshape(emap.target.shape)
    base = np.where(m.open, ux(g.centers()).reshape(g.shape), 0.0)
    rep = restriction_converse_check(w, m, base, ball, 2)
    assert rep["pass_fraction"] == 1.0
    assert rep["slices"] == ball.sum()
    assert rep["fubini_gap"] < 1e-12
    # a perturbed reference breaks every slice
    bad = restriction_converse_check(w, m, base + m.open * 1e-3, ball, 2)
    assert bad["pass_fraction"] == 0.0


def test_fubini_gap_small(emap):
    u = _field(emap, lambda x, y: np.exp(x[:, 0] - y[:, 0]))
    for p in (1.5, 2, 4):
        assert fubini_gap(u, p) < 1e-12


def test_split_field_roundtrip(tmp_path, emap):
    u = _field(emap, lambda x, y: x[:, 0] - 2 * y[:, 0])
    path = tmp_path / "u.fld"
    write_field(path, (u.grid, u.values), split=1)
    grid, vals, split = read_field(path)
    assert split == 1 and grid == u.grid
    assert np.array_equal(vals, u.values)
    write_field(path, (u.grid, u.values))
    assert read_field(path)[2] is None


def test_product_field_shape_check():
    g = GridSpec((0.0,), 0.5, (4,))
    with pytest.raises(ShapeMismatchError):
        ProductField(g, g, np.zeros(15))


def test_estimator_matches_functional_api(emap):
    m = emap.source
    est = ProductExtension(m, m, spacing=H, window1=Cube((0.5,), 2.0), window2=Cube((0.5,), 2.0))
    u = _field(emap, lambda x, y: np.cos(x[:, 0] + y[:, 0]))
    out = est.fit().transform(u.values.reshape(1, -1))
    w = extend_product(u, emap, emap)
    assert out.shape == (1, w.values.size)
    assert np.array_equal(out[0], w.values.ravel())
    with pytest.raises(ShapeMismatchError):
        est.transform(np.zeros((1, 3)))
    assert est.get_params()["epsilon"] == 0.5


def test_estimator_from_named_factors():
    est = ProductExtension("interval", "interval", spacing=1 / 16)
    est.fit()
    n = est.mask_x_.grid.n_cells * est.mask_y_.grid.n_cells
    out = est.transform(np.ones((2, n)))
    assert out.shape[0] == 2
    lay = layer_rows(est.map1_).reshape(est.map1_.target.shape)
    assert np.allclose(out[0].reshape(est.map1_.target.shape + est.map2_.target.shape)[
        np.multiply.outer(lay, layer_rows(est.map2_).reshape(est.map2_.target.shape))], 1.0)
