import json

import numpy as np
import pytest
from sklearn.base import clone

from sobex.errors import RegularityViolationError, ShapeMismatchError
from sobex.extension import (
    WhitneyExtension, apply, assemble, build_extension, default_window, fill_boundary,
    operator_norm_study,
)
from sobex.grid import Cube, ScalarField, mask_for_shape
from sobex.partition import build_partition, distance_to_set
from sobex.quasicubes import build_quasicubes
from sobex.suites import get_suite
from sobex.whitney import decompose


def sample(mask, f):
    vals = f(mask.grid.centers()).reshape(mask.grid.shape)
    return ScalarField(mask.grid, np.where(mask.open, vals, 0.0), mask)


def pointwise(emap, pts, filled):
    """``sum_Q phi_Q(x) P_Q u`` evaluated directly at arbitrary points."""
    pq = emap.P @ filled.ravel()
    rows, cubes, vals = emap.basis.values(pts)
    return np.bincount(rows, weights=vals * pq[cubes], minlength=len(pts))


def test_rows_nonnegative_and_sub_stochastic(square_map):
    W = square_map.weights
    assert W.data.min() >= 0
    sums = np.asarray(W.sum(axis=1)).ravel()
    assert sums.max() <= 1 + 1e-12


def test_constant_reproduced_on_layer(square_map):
    mask = square_map.source
    fam = square_map.basis.family
    u = ScalarField(mask.grid, np.where(mask.open, 3.0, 0.0), mask)
    eu = apply(square_map, u).values.ravel()
    # cells whose contributing cubes are all below the cutoff diameter
    centers = square_map.target.centers()
    free = ~fam.in_set(centers)
    rows, cubes, _ = square_map.basis.values(centers[free])
    big = np.zeros(free.sum(), bool)
    np.logical_or.at(big, rows, fam.diams[cubes] > 0.25)
    layer = np.flatnonzero(free)[~big]
    np.testing.assert_allclose(eu[layer], 3.0, rtol=1e-13)
    assert np.all(eu[~free] == 3.0)


def test_linearity(square_map, rng):
    mask = square_map.source
    u = rng.normal(size=mask.grid.shape) * mask.open
    v = rng.normal(size=mask.grid.shape) * mask.open
    eu, ev = apply(square_map, u).values, apply(square_map, v).values
    np.testing.assert_allclose(apply(square_map, u + v).values, eu + ev, rtol=1e-13, atol=1e-13)
    # scaling by a power of two is exact in binary arithmetic
    assert np.array_equal(apply(square_map, 4.0 * u).values, 4.0 * eu)
    assert not np.any(apply(square_map, 0 * u).values)


def test_positive(square_map, rng):
    mask = square_map.source
    u = rng.random(mask.grid.shape) * mask.open
    assert apply(square_map, u).values.min() >= 0


def test_restriction_exact(square_map):
    mask = square_map.source
    for fn in get_suite("smooth2d"):
        u = sample(mask, fn)
        eu = apply(square_map, u)
        back = square_map.restrict(eu.values)
        assert np.array_equal(back, fill_boundary(u.values, mask))
        assert np.array_equal(back[mask.open], u.values[mask.open])


def test_row_support_bound(square_map):
    fam = square_map.basis.family
    support = np.diff(square_map.weights.indptr)
    assert support.max() <= fam.star_overlap * square_map.qfam.sizes.max()
    stats = square_map.stats()
    assert stats["max_row_support"] == support.max()


def test_support_near_set(square_map):
    fam = square_map.basis.family
    nz = np.diff(square_map.weights.indptr) > 0
    d = distance_to_set(fam, square_map.target.centers()[nz])
    # x in Q* with diam Q <= delta_S forces dist(x, S) <= 4 delta_S + (9/8) delta_S
    assert d.max() <= (4 + 9 / 8) * 0.25 + fam.spacing


def test_locality(square_map, rng):
    mask = square_map.source
    centers = square_map.target.centers()
    # rows built from the partition alone (not S, not the contact layer)
    phi_only = (np.diff(square_map.D.indptr) == 0) & (np.diff(square_map.weights.indptr) > 0)
    free = np.flatnonzero(phi_only)
    for t in rng.choice(free, 20, replace=False):
        rows, cubes, _ = square_map.basis.values(centers[t][None])
        members = np.concatenate([square_map.qfam.members(c) for c in cubes] + [np.zeros(0, int)])
        u = rng.normal(size=mask.grid.n_cells)
        u[members] = 0.0
        u[~mask.closed.ravel()] = 0.0
        assert square_map.apply_vector(u)[t] == 0.0


def test_continuity_across_boundary():
    jumps = []
    for h in (1 / 32, 1 / 64):
        mask = mask_for_shape("unit_square", h)
        emap = build_extension(mask, Cube((0.5, 0.5), 2.0), 0.5, 0.25)
        eu = apply(emap, sample(mask, lambda x: x[:, 0]))
        T = emap.target
        ys = np.arange(0.25, 0.75, 0.0625)
        inside = np.array([[1 - h / 2, y] for y in ys])
        outside = np.array([[1 + h / 2, y] for y in ys])
        a, _ = T.cell_of(inside)
        b, _ = T.cell_of(outside)
        jumps.append(np.max(np.abs(eu.values[tuple(a.T)] - eu.values[tuple(b.T)])) / h)
    assert max(jumps) <= 4


def test_gradient_matches_pointwise_differences(square_map, rng):
    mask = square_map.source
    fam = square_map.basis.family
    filled = fill_boundary(sample(mask, lambda x: np.sin(3 * x[:, 0]) * x[:, 1]).values, mask)
    lo = np.asarray(fam.window.center) - fam.window.half_side
    pts = lo + rng.random((400, 2)) * fam.window.side
    pts = pts[distance_to_set(fam, pts) > fam.spacing][:100]
    g = square_map.gradient_at(pts, filled)
    eps = 1e-7
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = eps
        fd = (pointwise(square_map, pts + e, filled) - pointwise(square_map, pts - e, filled)) / (2 * eps)
        np.testing.assert_allclose(g[:, axis], fd, atol=1e-4 * (1 + np.abs(g).max()))


def test_norm_study_and_zero_input(square_map):
    fns = get_suite("smooth2d")
    rep = operator_norm_study(square_map, fns, 2)
    assert len(rep.ratios) == 10
    assert min(rep.ratios) >= 0.95
    assert np.isfinite(rep.max_ratio)
    with pytest.warns(UserWarning):
        rep0 = operator_norm_study(square_map, [lambda x: 0 * x[:, 0]], 2)
    assert rep0.ratios == []


def test_regularity_violation_propagates():
    m = mask_for_shape("segment", 1 / 32)
    fam = decompose(m, default_window(m, 4))
    q = build_quasicubes(fam, m, 0.5, 0.25, strict=False)
    with pytest.raises(RegularityViolationError):
        assemble(q, build_partition(fam))


def test_fill_boundary_modes():
    m = mask_for_shape("unit_square", 1 / 8)
    u = np.where(m.open, 2.0, 0.0)
    tr = fill_boundary(u, m, "trace")
    assert np.all(tr[m.closed] == 2.0) and np.all(tr[~m.closed] == 0)
    z = fill_boundary(u, m, "zero")
    assert np.all(z[m.boundary_layer] == 0)
    given = fill_boundary(np.full(m.grid.shape, 5.0), m, "given")
    assert np.all(given[m.closed] == 5.0)
    with pytest.raises(ValueError):
        fill_boundary(u, m, "mirror")


def test_dump_stats(square_map, tmp_path):
    square_map.dump_stats(tmp_path / "op.json")
    doc = json.loads((tmp_path / "op.json").read_text())
    assert {"rows", "nnz", "max_row_support", "layer_volume"} <= set(doc)
    assert doc["rows"] == square_map.target.n_cells


def test_estimator_api():
    est = WhitneyExtension(domain="unit_square", spacing=1 / 16, delta_S=0.25)
    assert clone(est).get_params() == est.get_params()
    est.fit()
    mask = est.mask_
    X = np.stack([sample(mask, fn).values.ravel() for fn in get_suite("smooth2d")[:3]])
    Y = est.transform(X)
    assert Y.shape == (3, est.map_.target.n_cells)
    back = est.restrict(Y)
    np.testing.assert_array_equal(back[:, mask.open.ravel()], X[:, mask.open.ravel()])
    with pytest.raises(ShapeMismatchError):
        est.transform(X[:, :-1])
    single = apply(est.map_, X[0].reshape(mask.grid.shape)).values.ravel()
    np.testing.assert_allclose(Y[0], single, rtol=1e-13, atol=1e-14)
