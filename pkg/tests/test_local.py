import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sobex.errors import DegenerateDomainError, EmptyRegionError
from sobex.grid import Cube, DomainMask, GridSpec, ScalarField, mask_for_shape
from sobex.local import (
    best_constant, best_constant_values, local_lambda, mean_projection, sharp_maximal,
    sobolev_report,
)


def brute(values, p, weights=None, n=10_000):
    """Minimum over a dense candidate set (linspace plus the samples themselves)."""
    v = np.asarray(values, float)
    w = np.ones_like(v) if weights is None else weights
    cand = np.union1d(np.linspace(v.min(), v.max(), n), v)
    d = np.abs(v[None, :] - cand[:, None])
    if np.isinf(p):
        err = d.max(axis=1)
    else:
        err = (d ** p @ w) ** (1 / p)
    k = np.argmin(err)
    return cand[k], err[k]


def line(h=1 / 64, lo=-1.0, hi=1.0):
    n = int(round((hi - lo) / h))
    return GridSpec((lo,), h, (n,))


def test_constant_field():
    g = line()
    u = ScalarField(g, np.full(g.shape, 5.0))
    assert best_constant(u, np.ones(g.shape, bool), 3) == (5.0, 0.0)


def test_linear_l1():
    g = line(1 / 256)
    u = ScalarField.from_function(g, lambda x: x[:, 0])
    c, err = best_constant(u, np.ones(g.shape, bool), 1)
    assert c == pytest.approx(0.0, abs=1e-12)
    assert err == pytest.approx(1.0, rel=1e-4)
    cb, eb = brute(u.values, 1, np.full(g.shape, g.cell_volume))
    assert err <= eb * (1 + 1e-12)


def test_linear_l2_mean():
    g = line(1 / 128, 0.0, 1.0)
    u = ScalarField.from_function(g, lambda x: x[:, 0])
    c, _ = best_constant(u, np.ones(g.shape, bool), 2)
    assert c == pytest.approx(0.5)
    assert mean_projection(u, np.ones(g.shape, bool)) == pytest.approx(0.5)


def test_empty_region():
    g = line()
    u = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(EmptyRegionError):
        best_constant(u, np.zeros(g.shape, bool), 2)
    with pytest.raises(EmptyRegionError):
        mean_projection(u, np.zeros(g.shape, bool))


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=st.floats(-10, 10)),
       st.sampled_from([1.0, 1.5, 2.0, 3.0, 4.0, np.inf]))
def test_best_constant_beats_brute_force(v, p):
    c, err = best_constant_values(v, p)
    _, eb = brute(v, p)
    assert err <= eb * (1 + 1e-6) + 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.integers(2, 30), elements=st.floats(-5, 5)), st.floats(-3, 3),
       st.floats(0.1, 4), st.sampled_from([1.0, 1.5, 2.0, 4.0]))
def test_translation_and_scaling(v, shift, scale, p):
    _, e0 = best_constant_values(v, p)
    _, e1 = best_constant_values(v + shift, p)
    _, e2 = best_constant_values(scale * v, p)
    assert e1 == pytest.approx(e0, rel=1e-7, abs=1e-9)
    assert e2 == pytest.approx(scale * e0, rel=1e-7, abs=1e-9)


def test_lambda_linear_1d():
    g = line(1 / 256)
    u = ScalarField.from_function(g, lambda x: x[:, 0])
    for x0, r in [(0.0, 0.25), (0.3, 0.125), (-0.4, 0.5)]:
        q = Cube((x0,), r)
        assert local_lambda(u, q, None, 1) / r == pytest.approx(0.5, rel=0.02)


def test_lambda_empty_and_constant():
    g = line()
    u = ScalarField(g, np.full(g.shape, 2.0))
    assert local_lambda(u, Cube((0.0,), 0.3), None, 2) == 0.0
    A = np.zeros(g.shape, bool)
    assert local_lambda(u, Cube((0.0,), 0.3), A, 2) == 0.0


def test_lambda_nested_monotonicity(rng):
    g = GridSpec((0.0, 0.0), 1 / 32, (32, 32))
    c = g.centers()
    u = ScalarField(g, (np.sin(5 * c[:, 0]) + c[:, 1] ** 2 + rng.normal(0, 0.1, len(c))).reshape(g.shape))
    for _ in range(100):
        p = rng.choice([1.0, 1.5, 2.0, 4.0])
        r2 = rng.uniform(0.1, 0.4)
        c2 = rng.uniform(0.1, 0.9, 2)
        r1 = rng.uniform(0.02, r2)
        c1 = c2 + rng.uniform(-1, 1, 2) * (r2 - r1)
        q1, q2 = Cube(c1, r1), Cube(c2, r2)
        l1 = local_lambda(u, q1, None, p)
        l2 = local_lambda(u, q2, None, p)
        assert l1 <= (q2.volume / q1.volume) ** (1 / p) * l2 * (1 + 1e-8) + 1e-12


def test_mean_projection_near_optimal(rng):
    g = GridSpec((0.0, 0.0), 1 / 16, (16, 16))
    for _ in range(100):
        u = ScalarField(g, rng.normal(size=g.shape) ** 3)
        q = Cube(rng.uniform(0.3, 0.7, 2), rng.uniform(0.1, 0.3))
        from sobex.local import cube_cells
        inq = cube_cells(g, q)
        A = inq & (rng.random(g.shape) < rng.uniform(0.2, 1))
        if not A.any():
            continue
        p = rng.choice([1.0, 1.5, 2.0, 4.0])
        P = mean_projection(u, A)
        _, best = best_constant(u, A, p)
        err = (np.sum(np.abs(u.values[A] - P) ** p) * g.cell_volume) ** (1 / p)
        ratio = inq.sum() / A.sum()
        assert err <= 2 * ratio * best + 1e-12
        assert mean_projection(ScalarField(g, u.values + 3.0), A) == pytest.approx(P + 3.0)


def test_sharp_constant_is_zero():
    g = GridSpec((0.0, 0.0), 1 / 16, (16, 16))
    us = sharp_maximal(ScalarField(g, np.full(g.shape, 7.0)))
    assert np.all(us.values == 0)


@pytest.mark.parametrize("a", [1.0, -3.0])
def test_sharp_linear_1d(a):
    g = line(1 / 128)
    u = ScalarField.from_function(g, lambda x: a * x[:, 0])
    us = sharp_maximal(u)
    mid = np.abs(g.axis_centers(0)) < 0.5
    np.testing.assert_allclose(us.values[mid], abs(a) / 2, rtol=0.1)


def test_sharp_sublinear(rng):
    g = GridSpec((0.0, 0.0), 1 / 16, (16, 16))
    A = rng.random(g.shape) < 0.8
    u = rng.normal(size=g.shape)
    v = rng.normal(size=g.shape)
    su = sharp_maximal(ScalarField(g, u), A).values
    sv = sharp_maximal(ScalarField(g, v), A).values
    suv = sharp_maximal(ScalarField(g, u + v), A).values
    assert np.all(suv <= su + sv + 1e-12)
    assert np.all(suv[~A] == 0)


def test_sharp_matches_direct_lambda():
    g = GridSpec((0.0, 0.0), 1 / 16, (16, 16))
    c = g.centers()
    u = ScalarField(g, (c[:, 0] ** 2 - np.cos(3 * c[:, 1])).reshape(g.shape))
    us = sharp_maximal(u, None, radii=[1, 2, 4])
    h = g.spacing
    for idx in [(0, 0), (5, 9), (15, 3), (8, 8)]:
        x = c[np.ravel_multi_index(idx, g.shape)]
        direct = max(local_lambda(u, Cube(x, (k + 0.5) * h), None, 1) / ((k + 0.5) * h) for k in (1, 2, 4))
        assert us.values[idx] == pytest.approx(direct, rel=1e-10)


def test_sobolev_constant_and_linear():
    m = mask_for_shape("unit_square", 1 / 256)
    one = ScalarField(m.grid, m.open.astype(float), m)
    rep = sobolev_report(one, p=2)
    assert rep.lp_norm == pytest.approx(1.0)
    assert rep.grad_lp_norm == 0 and rep.w1p_norm == pytest.approx(1.0)
    u = ScalarField.from_function(m.grid, lambda x: x[:, 0], m)
    rep = sobolev_report(u, p=2)
    assert rep.lp_norm == pytest.approx(1 / np.sqrt(3), abs=1e-3)
    assert rep.grad_lp_norm == pytest.approx(1.0, abs=1e-3)
    assert rep.w1p_norm >= rep.lp_norm


def test_sobolev_refinement_monotone():
    vals = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        m = mask_for_shape("unit_square", h)
        u = ScalarField.from_function(m.grid, lambda x: x[:, 0] ** 2 + x[:, 0] * x[:, 1], m)
        vals.append(sobolev_report(u, p=2).w1p_norm)
    assert all(b <= a * 1.01 for a, b in zip(vals, vals[1:]))


def test_sobolev_sharp_fields():
    m = mask_for_shape("unit_disk", 1 / 16)
    u = ScalarField.from_function(m.grid, lambda x: x[:, 0] * x[:, 1], m)
    rep = sobolev_report(u, p=2, sharp=True)
    assert rep.c1p_norm == pytest.approx(rep.lp_norm + rep.sharp_lp_norm)
    assert rep.c1p_norm >= rep.lp_norm


def test_sobolev_degenerate():
    g = GridSpec((0.0, 0.0), 0.25, (4, 4))
    op = np.zeros((4, 4), bool)
    op[1, :] = True
    m = DomainMask.from_open(g, op)
    with pytest.raises(DegenerateDomainError):
        sobolev_report(ScalarField(g, np.zeros((4, 4)), m))
    with pytest.raises(ValueError):
        sobolev_report(ScalarField(g, np.zeros((4, 4))), p=1)
