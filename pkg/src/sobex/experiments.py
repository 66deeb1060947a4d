"""Measurement routines behind the acceptance runs and the batch harness.

Each function builds its own domains, returns plain dicts of measured
numbers and leaves the pass/fail decision to the caller.
"""

import time

import numpy as np

from .extension import apply, build_extension, default_window, fill_boundary, operator_norm_study
from .grid import Cube, GridSpec, ScalarField, mask_for_shape, rasterize
from .local import sharp_maximal, sobolev_report
from .partition import build_partition, certify_partition
from .product import (
    ProductField, commutation_check, extend_product, fitted_order, restriction_converse_check,
)
from .quasicubes import build_quasicubes, certify_quasicubes, overlap_histogram
from .regularity import geodesic_ratio
from .shapes import Box, HalfSpace, load_shape
from .suites import get_suite, product_suite
from .whitney import certify_family, decompose


# --- Whitney ----------------------------------------------------------------

def whitney_run(domain, spacing, margin=5.0):
    """Decompose a window with ``margin * diam S`` on every side and certify it."""
    mask = mask_for_shape(load_shape(domain), spacing)
    window = default_window(mask, 1.0 + 2.0 * margin)
    t0 = time.perf_counter()
    fam = decompose(mask, window, certify=False)
    stats = certify_family(fam)
    stats["seconds"] = time.perf_counter() - t0
    stats["h"] = spacing
    stats["window_side"] = window.side
    stats["domain_hash"] = mask.digest()
    return stats


# --- partition of unity -----------------------------------------------------

def unit_square_family(spacing, window_half=2.0):
    """Unit square on a grid that fills the window ``[0.5 - w, 0.5 + w]^2``."""
    n = int(round(2 * window_half / spacing))
    lo = 0.5 - window_half
    grid = GridSpec((lo, lo), spacing, (n, n))
    mask = rasterize(Box([0.0, 0.0], [1.0, 1.0]), grid)
    return mask, Cube((0.5, 0.5), window_half)


def partition_run(spacing, probes=10_000, seed=0):
    mask, window = unit_square_family(spacing)
    fam = decompose(mask, window)
    basis = build_partition(fam)
    out = certify_partition(basis, probes, seed)
    out["gradient_constant"] = basis.gradient_constant()
    out["h"] = spacing
    return out


# --- quasi-cubes ------------------------------------------------------------

def quasicube_mask(domain, spacing):
    """Masks and windows for the quasi-cube runs; the half-plane fills its grid."""
    if domain == "half_plane":
        n = int(round(2.0 / spacing))
        grid = GridSpec((-1.0, -1.0), spacing, (n, n))
        return rasterize(HalfSpace([0.0, 1.0], 0.0), grid), Cube((0.0, 0.0), 1.0), 0.5
    if domain == "unit_square":
        mask, window = unit_square_family(spacing)
        return mask, window, 0.25
    if domain == "unit_disk":
        n = int(round(8.0 / spacing))
        grid = GridSpec((-4.0, -4.0), spacing, (n, n))
        from .shapes import Ball
        return rasterize(Ball([0.0, 0.0], 1.0), grid), Cube((0.0, 0.0), 4.0), 0.5
    raise ValueError(f"no quasi-cube setup for {domain!r}")


def quasicube_run(domain, spacing, epsilon=0.5):
    mask, window, delta = quasicube_mask(domain, spacing)
    fam = decompose(mask, window)
    q = build_quasicubes(fam, mask, epsilon, delta)
    out = certify_quasicubes(q)
    hist = overlap_histogram(q)
    out["histogram"] = hist
    out["double_count_ok"] = sum(k * v for k, v in hist.items()) == int(q.sizes.sum())
    if domain == "half_plane":
        x = mask.grid.centers()[:, 0].reshape(mask.grid.shape)
        out["interior_gamma2"] = max(overlap_histogram(q, np.abs(x) < 0.5))
    out["h"] = spacing
    out["delta_S"] = delta
    return out


# --- Calderon bracket -------------------------------------------------------

def calderon_run(spacing, ps=(1.5, 2.0, 4.0), suite="smooth2d"):
    """``(||u||_p + ||u^#||_p) / ||u||_{W^{1,p}}`` on the unit square for each suite member."""
    n = int(round(1.0 / spacing))
    grid = GridSpec((0.0, 0.0), spacing, (n, n))
    vol = grid.cell_volume
    rows = []
    for fn in get_suite(suite):
        u = ScalarField.from_function(grid, fn)
        us = sharp_maximal(u)  # independent of p
        for p in ps:
            rep = sobolev_report(u, None, p)
            sharp = float((np.sum(us.values ** p) * vol) ** (1 / p))
            rows.append({"name": fn.name, "p": p, "ratio": (rep.lp_norm + sharp) / rep.w1p_norm})
    return rows


def calderon_brackets(rows):
    out = {}
    for p in sorted({r["p"] for r in rows}):
        vals = [r["ratio"] for r in rows if r["p"] == p]
        out[p] = (min(vals), max(vals))
    return out


# --- extension on the unit square --------------------------------------------

def square_extension(spacing, delta_S=0.25, epsilon=0.5):
    mask, window = unit_square_family(spacing)
    return build_extension(mask, window, epsilon, delta_S)


def extension_run(spacing, p=2.0, suite="smooth2d", reference=None, emap=None):
    emap = square_extension(spacing) if emap is None else emap
    fns = get_suite(suite)
    report = operator_norm_study(emap, fns, p, reference=reference)
    mask = emap.source
    restriction_ok = True
    contraction_ok = True
    for fn in fns:
        vals = np.where(mask.open, fn(mask.grid.centers()).reshape(mask.grid.shape), 0.0)
        filled = fill_boundary(vals, mask)
        eu = apply(emap, ScalarField(mask.grid, vals, mask))
        back = emap.restrict(eu.values)
        restriction_ok &= bool(np.array_equal(back[mask.closed], filled[mask.closed]))
        # rows sum to one only up to rounding
        contraction_ok &= bool(np.max(np.abs(eu.values)) <= np.max(np.abs(filled)) * (1 + 1e-14))
    return report, {"restriction_exact": restriction_ok, "linf_contraction": contraction_ok}


# --- slit square ------------------------------------------------------------

def slit_extension(spacing, delta_S=0.25, epsilon=0.5):
    """Slit square on a grid whose cell centres include the slit row."""
    shape = load_shape("slit_square")
    n = int(round(8.0 / spacing))
    lo = -4.0 - spacing / 2
    grid = GridSpec((lo, lo), spacing, (n, n))
    mask = rasterize(shape, grid)
    window = Cube((lo + 4.0, lo + 4.0), 4.0)
    return build_extension(mask, window, epsilon, delta_S)


def slit_run(spacings=(1 / 32, 1 / 64, 1 / 128), p=2.0, delta_cells=4):
    reports = []
    prev = None
    for h in spacings:
        emap = slit_extension(h)
        rep = operator_norm_study(emap, get_suite("jump"), p, reference=prev)
        reports.append(rep)
        prev = rep
    growth = [b.max_ratio / a.max_ratio for a, b in zip(reports, reports[1:])]
    h = spacings[-1]
    mask = slit_extension_mask(h)
    d = delta_cells * h / 2
    qc = geodesic_ratio(mask, (0.5, d), (0.5, -d))
    return {
        "spacings": list(spacings),
        "max_ratios": [r.max_ratio for r in reports],
        "growth": growth,
        "quasiconvexity_ratio": qc,
        "p": p,
    }


def slit_extension_mask(spacing):
    n = int(round(8.0 / spacing))
    lo = -4.0 - spacing / 2
    return rasterize(load_shape("slit_square"), GridSpec((lo, lo), spacing, (n, n)))


# --- products ---------------------------------------------------------------

def interval_extension(spacing, delta_S=0.25, epsilon=0.5):
    n = int(round(4.0 / spacing))
    grid = GridSpec((-1.5,), spacing, (n,))
    mask = rasterize(Box([0.0], [1.0]), grid)
    return build_extension(mask, Cube((0.5,), 2.0), epsilon, delta_S)


def _sin_product(x, y):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * y[:, 0])


def _sin_product_dy(x, y):
    return np.sin(np.pi * x[:, 0]) * np.pi * np.cos(np.pi * y[:, 0])


def commutation_run(spacings=(1 / 32, 1 / 64, 1 / 128)):
    residuals = []
    for h in spacings:
        emap = interval_extension(h)
        g, m = emap.source.grid, emap.source
        u = ProductField.from_function(g, g, _sin_product, m, m)
        du = ProductField.from_function(g, g, _sin_product_dy, m, m)
        residuals.append(commutation_check(u, du, emap, 0)["residual"])
    return {"spacings": list(spacings), "residuals": residuals,
            "order": fitted_order(spacings, residuals)}


def product_run(spacing, p=2.0, reference=None):
    emap = interval_extension(spacing)
    g, m = emap.source.grid, emap.source
    ratios, names = [], []
    restriction_ok = True
    coherence_gap = 0.0
    converse = 1.0
    for fn in product_suite():
        u = ProductField.from_function(g, g, fn, m, m)
        w = extend_product(u, emap, emap)
        full = ProductField(w.grid_x, w.grid_y, w.values)
        ratios.append(full.sobolev(p).w1p_norm / u.sobolev(p).w1p_norm)
        names.append(fn.name)
        back = _restrict_product(w, emap, u)
        restriction_ok &= bool(np.array_equal(back, u.values[u.open_cells]))
        swapped = extend_product(u.transpose(), emap, emap).transpose()
        gap = float(np.max(np.abs(swapped.values - w.values)))
        coherence_gap = max(coherence_gap, gap / max(1.0, float(np.max(np.abs(w.values)))))
    # converse: v(x, y) = u(x) on the product, every slice restricts to u
    ux = get_suite("smooth1d")[4]
    v = ProductField.from_function(g, g, lambda x, y: ux(x), m, m)
    w = extend_product(v, emap, emap)
    ball = _y_ball(emap, 0.5, 0.25)
    conv = restriction_converse_check(w, m, np.where(m.open, ux(g.centers()).reshape(g.shape), 0.0),
                                      ball, p)
    converse = conv["pass_fraction"]
    mx = max(ratios)
    drift = None if reference is None else abs(mx - reference["max_ratio"]) / reference["max_ratio"]
    return {
        "h": spacing, "p": p, "ratios": ratios, "names": names, "max_ratio": mx,
        "refinement_drift": drift, "restriction_exact": restriction_ok,
        "transpose_gap": coherence_gap, "converse_pass_fraction": converse,
        "converse_max_slice_norm": conv["max_slice_norm"], "fubini_gap": conv["fubini_gap"],
    }


def _y_ball(emap, center, radius):
    """Cells of the y window whose centres lie within ``radius`` of ``center``."""
    c = emap.target.centers()[:, 0]
    return (np.abs(c - center) < radius).reshape(emap.target.shape)


def _restrict_product(w, emap, u):
    t2s = emap.source_in_target()
    ox = np.flatnonzero(u.mask_x.open.ravel())
    tgt = np.full(emap.source.grid.n_cells, -1, dtype=np.int64)
    ok = t2s >= 0
    tgt[t2s[ok]] = np.flatnonzero(ok)
    ix = tgt[ox]
    M = w.matrix()
    return M[np.ix_(ix, ix)].ravel()
