import numpy as np
import pytest

from sobex.errors import RegularityViolationError
from sobex.extension import default_window
from sobex.grid import Cube, GridSpec, mask_for_shape, rasterize
from sobex.quasicubes import (
    build_quasicubes, certify_quasicubes, overlap_histogram, reflection_disjointness,
)
from sobex.shapes import HalfSpace
from sobex.whitney import decompose

TOL = 1e-9


def oracle(fam, eps, delta):
    """H_Q by the displayed set rule, with brute-force nearest points."""
    grid = fam.mask.grid
    h = grid.spacing
    S = grid.centers()[fam.mask.closed.ravel()]
    S_idx = np.flatnonzero(fam.mask.closed.ravel())
    a = []
    for c in fam.centers:
        d = np.max(np.abs(S - c), axis=1)
        near = np.flatnonzero(d <= d.min() + TOL * h)
        pts = S[near]
        a.append(pts[np.lexsort(pts.T[::-1])[0]])
    a = np.array(a)
    r = fam.half_sides
    out = []
    for q in range(len(fam)):
        if fam.diams[q] > delta:
            out.append(set())
            continue
        inside = np.max(np.abs(S - a[q]), axis=1) <= eps * r[q] + TOL * h
        if fam.diams[q] >= 4 * h / eps:
            for k in range(len(fam)):
                if k == q or r[k] > eps * r[q] + TOL * h:
                    continue
                if np.max(np.abs(a[k] - a[q])) > eps * (r[k] + r[q]) + TOL * h:
                    continue
                inside &= np.max(np.abs(S - a[k]), axis=1) > eps * r[k] + TOL * h
        out.append(set(S_idx[inside].tolist()))
    return a, out


@pytest.fixture(scope="module")
def small_square():
    m = mask_for_shape("unit_square", 1 / 16)
    fam = decompose(m, Cube((0.5, 0.5), 2.0))
    return m, fam


def test_matches_set_rule(small_square):
    m, fam = small_square
    q = build_quasicubes(fam, m, 0.5, 0.5)
    a, sets = oracle(fam, 0.5, 0.5)
    np.testing.assert_allclose(q.nearest_point, a)
    for i in range(len(fam)):
        assert set(q.members(i).tolist()) == sets[i]


def test_containment_in_ten_q(square_qfam):
    fam = square_qfam.family
    grid = fam.mask.grid
    c = grid.centers()
    for i in range(len(fam)):
        mem = square_qfam.members(i)
        assert fam.mask.closed.ravel()[mem].all()
        if mem.size:
            assert np.max(np.abs(c[mem] - fam.centers[i])) <= 10 * fam.half_sides[i]
        # Q(a_K, r_K) sits inside 10K
        dev = np.max(np.abs(square_qfam.nearest_point[i] - fam.centers[i]))
        assert dev + fam.half_sides[i] <= 10 * fam.half_sides[i]


def test_disjoint_from_removed_reflections(square_qfam):
    fam = square_qfam.family
    for i in range(0, len(fam), 5):
        if not square_qfam.floor[i]:
            assert reflection_disjointness(square_qfam, i) == 0


def test_empty_above_delta(square_qfam):
    fam = square_qfam.family
    big = fam.diams > 0.25
    assert big.any()
    assert np.all(square_qfam.sizes[big] == 0)
    assert np.all(square_qfam.sizes[~big] > 0)


def test_histogram_double_count(square_qfam):
    hist = overlap_histogram(square_qfam)
    assert max(hist) == square_qfam.gamma2
    assert sum(k * v for k, v in hist.items()) == square_qfam.sizes.sum()
    assert sum(hist.values()) == square_qfam.family.mask.closed.sum()


def test_zero_delta_gives_empty_family(small_square):
    m, fam = small_square
    q = build_quasicubes(fam, m, 0.5, 0.0)
    assert overlap_histogram(q) == {0: int(m.closed.sum())}


def test_gamma1_is_worst_checked_ratio(square_qfam):
    rep = certify_quasicubes(square_qfam)
    assert rep["max_ratio"] == square_qfam.gamma1
    assert rep["empty_cubes"] == 0


@pytest.mark.parametrize("eps", [0.25, 0.5, 1.0])
def test_epsilon_sweep_well_defined(small_square, eps):
    m, fam = small_square
    q = build_quasicubes(fam, m, eps, 0.5, strict=False)
    certify_quasicubes(q)
    assert np.isfinite(q.gamma1)
    # at eps = 1 same-size neighbours remove all of Q_eps n S for some cubes
    assert bool(q.violations) == (eps == 1.0)


def test_half_plane_constants_stay_finite():
    g1, g2 = [], []
    for h in (1 / 32, 1 / 64, 1 / 128):
        n = int(2 / h)
        m = rasterize(HalfSpace([0, 1], 0.0), GridSpec((-1.0, -1.0), h, (n, n)))
        q = build_quasicubes(decompose(m, Cube((0.0, 0.0), 1.0)), m, 0.5, 0.5)
        assert not q.violations
        x = m.grid.centers()[:, 0].reshape(m.grid.shape)
        g1.append(q.gamma1)
        g2.append(max(overlap_histogram(q, np.abs(x) < 0.5)))
    assert max(g1) < 2 * min(g1)
    assert max(g2) <= 10 and len(set(g2)) == 1


def test_segment_is_flagged():
    m = mask_for_shape("segment", 1 / 32)
    fam = decompose(m, default_window(m, 4))
    with pytest.raises(RegularityViolationError) as info:
        build_quasicubes(fam, m, 0.5, 0.25)
    assert info.value.cubes
    q = build_quasicubes(fam, m, 0.5, 0.25, strict=False)
    assert set(q.violations) == set(info.value.cubes)


def test_jsonl_records(square_qfam, tmp_path):
    import json
    square_qfam.dump_jsonl(tmp_path / "q.jsonl")
    recs = [json.loads(s) for s in (tmp_path / "q.jsonl").read_text().splitlines()]
    assert set(recs[0]) == {"cube_id", "a_K", "epsilon", "member_count", "ratio"}
    assert sum(r["member_count"] for r in recs) == square_qfam.sizes.sum()
