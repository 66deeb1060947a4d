"""Local best-constant approximation, sharp maximal function and grid Sobolev norms."""

from dataclasses import dataclass
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import brentq

from ._validation import check_exponent, check_grid_values
from .errors import DegenerateDomainError, EmptyRegionError
from .grid import ScalarField, box_sums, lp_norm, summed_volume_table


# --- best constants ---------------------------------------------------------

def weighted_median(values, weights):
    """Minimiser of ``sum w |v - c|``; the midpoint of the median interval on ties."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    half = cw[-1] / 2.0
    k = int(np.searchsorted(cw, half * (1 - 1e-14)))
    if k + 1 < len(v) and abs(cw[k] - half) <= 1e-12 * cw[-1]:
        return 0.5 * (v[k] + v[k + 1])
    return float(v[k])


def _error(v, w, c, p):
    d = np.abs(v - c)
    if math.isinf(p):
        return float(d.max())
    return float(np.sum(w * d ** p) ** (1.0 / p))


def best_constant_values(values, p, weights=None):
    """``(c*, min_c ||v - c||_p)`` for samples ``values`` with quadrature ``weights``."""
    p = check_exponent(p)
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyRegionError("best constant over an empty region")
    w = np.ones_like(v) if weights is None else np.broadcast_to(
        np.asarray(weights, dtype=float), v.shape)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return lo, 0.0
    if math.isinf(p):
        c = 0.5 * (lo + hi)
    elif p == 1:
        c = weighted_median(v, w)
    elif p == 2:
        c = float(np.sum(w * v) / np.sum(w))
    else:
        # the objective is strictly convex; its derivative is monotone in c
        z = (v - lo) / (hi - lo)

        def slope(t):
            d = z - t
            return float(np.sum(w * np.sign(d) * np.abs(d) ** (p - 1)))

        t = brentq(slope, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
        c = lo + t * (hi - lo)
    return c, _error(v, w, c, p)


def _region_values(u, region):
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    region = np.asarray(region)
    if region.dtype == bool:
        if region.shape != vals.shape:
            raise ValueError("region mask does not match the field")
        return vals[region]
    return vals.ravel()[region.astype(np.int64)]


def best_constant(u, region, p):
    """Best constant approximation of ``u`` on the cells ``region`` in ``L^p``.

    ``region`` is a boolean array on the grid or an array of flat cell indices.
    Returns ``(c*, error)`` with the error measured with cell-volume weights.
    """
    v = _region_values(u, region)
    vol = u.grid.cell_volume if isinstance(u, ScalarField) else 1.0
    return best_constant_values(v, p, np.full(v.shape, vol))


def mean_projection(u, region):
    """Cell-volume weighted mean of ``u`` over ``region``."""
    v = _region_values(u, region)
    if v.size == 0:
        raise EmptyRegionError("mean over an empty region")
    return float(np.mean(v))


def cube_cells(grid, cube, A=None):
    """Boolean array of cells whose centres lie in the closed cube (and in ``A``)."""
    idx = []
    for a in range(grid.dim):
        c = grid.axis_centers(a)
        idx.append(np.abs(c - cube.center[a]) <= cube.half_side * (1 + 1e-12) + 1e-12)
    sel = idx[0]
    for a in range(1, grid.dim):
        sel = np.multiply.outer(sel, idx[a])
    if A is not None:
        sel = sel & _as_region(A)
    return sel


def _as_region(A):
    if hasattr(A, "closed"):
        return A.closed
    return np.asarray(A, dtype=bool)


def local_lambda(u, cube, A=None, p=1):
    """``|Q|^{-1/p} min_c ||u - c||_{L^p(Q n A)}``; zero when ``Q n A`` is empty."""
    p = check_exponent(p)
    sel = cube_cells(u.grid, cube, A)
    if not sel.any():
        return 0.0
    _, err = best_constant(u, sel, p)
    if math.isinf(p):
        return err
    return err / cube.volume ** (1.0 / p)


# --- sharp maximal function -----------------------------------------------

def default_ladder(region):
    """Cell half-widths ``k = 2^j`` up to the first one whose cube sees all of ``region``."""
    rows = np.argwhere(region)
    span = int((rows.max(axis=0) - rows.min(axis=0)).max()) if len(rows) else 0
    ks = [1]
    while ks[-1] < span:
        ks.append(ks[-1] * 2)
    return ks


def _window_median_l1(vals, region, points, k, budget=2_000_000):
    """Lower median and L1 deviation of ``vals`` over ``(2k+1)^n`` boxes clipped to ``region``."""
    n = vals.ndim
    w = 2 * k + 1
    W = w ** n
    data = np.where(region, vals, np.inf)
    padded = np.pad(data, k, constant_values=np.inf)
    view = sliding_window_view(padded, (w,) * n)
    sat = summed_volume_table(region)
    counts = box_sums(sat, points - k, points + k + 1)
    K = (W - 1) // 2
    med = np.empty(len(points))
    l1 = np.empty(len(points))
    step = max(1, budget // W)
    for s in range(0, len(points), step):
        pts = points[s:s + step]
        X = view[tuple(pts.T)].reshape(len(pts), W)
        c = counts[s:s + step]
        # move enough pads below the data that the global middle is the data's lower median
        low = K - (c - 1) // 2
        if np.any(low > 0):
            bad = X == np.inf
            rank = np.cumsum(bad, axis=1, dtype=np.int16 if W < 2 ** 15 else np.int32)
            bad &= rank <= low[:, None]
            X[bad] = -np.inf
        X.partition(K, axis=1)
        m = X[:, K].copy()
        X -= m[:, None]
        np.abs(X, out=X)
        med[s:s + step] = m
        l1[s:s + step] = np.sum(X, axis=1, where=X < np.inf)
    return med, l1


def sharp_maximal(u, A=None, radii=None):
    """``sup_r r^{-1} Lambda(u; Q(x, r))_{L^1(A)}`` over a dyadic ladder, at cells of ``A``.

    ``radii`` are half-widths in cells: the cube of index ``k`` has radius
    ``(k + 1/2) h`` and holds exactly ``(2k+1)^n`` cell centres. Values off
    ``A`` are zero.
    """
    grid = u.grid
    vals = check_grid_values(u.values, grid)
    region = np.ones(grid.shape, dtype=bool) if A is None else _as_region(A)
    if region.shape != grid.shape:
        raise ValueError("A lives on a different grid")
    h, n = grid.spacing, grid.dim
    pts = np.argwhere(region)
    out = np.zeros(grid.shape)
    if len(pts) == 0:
        return ScalarField(grid, out)
    ks = default_ladder(region) if radii is None else [int(k) for k in radii]
    best = np.zeros(len(pts))
    span = (pts.max(axis=0) - pts.min(axis=0)).max()
    for k in ks:
        r = (k + 0.5) * h
        scale = h ** n / ((2 * r) ** n * r)
        if k >= span:
            # the box sees every cell of A from every point
            v = vals[region]
            m = np.partition(v, (v.size - 1) // 2)[(v.size - 1) // 2]
            best = np.maximum(best, np.abs(v - m).sum() * scale)
            break
        _, l1 = _window_median_l1(vals, region, pts, k)
        best = np.maximum(best, l1 * scale)
    out[tuple(pts.T)] = best
    return ScalarField(grid, out)


# --- Sobolev norms --------------------------------------------------------

def grid_gradient(values, open_cells, spacing):
    """Per-axis finite differences on ``open_cells``.

    Central where both axis neighbours are open, one-sided where only one is,
    zero where neither is. Returns an array of shape ``(n,) + grid shape``.
    """
    vals = np.asarray(values, dtype=float)
    op = np.asarray(open_cells, dtype=bool)
    n = vals.ndim
    grads = np.zeros((n,) + vals.shape)
    for a in range(n):
        fwd = np.zeros_like(op)
        bwd = np.zeros_like(op)
        sl_hi = [slice(None)] * n
        sl_lo = [slice(None)] * n
        sl_hi[a] = slice(1, None)
        sl_lo[a] = slice(None, -1)
        sl_hi, sl_lo = tuple(sl_hi), tuple(sl_lo)
        fwd[sl_lo] = op[sl_hi]
        bwd[sl_hi] = op[sl_lo]
        up = np.zeros_like(vals)
        dn = np.zeros_like(vals)
        up[sl_lo] = vals[sl_hi]
        dn[sl_hi] = vals[sl_lo]
        both = op & fwd & bwd
        only_f = op & fwd & ~bwd
        only_b = op & bwd & ~fwd
        g = grads[a]
        g[both] = (up[both] - dn[both]) / (2 * spacing)
        g[only_f] = (up[only_f] - vals[only_f]) / spacing
        g[only_b] = (vals[only_b] - dn[only_b]) / spacing
    return grads


def interior_cells(open_cells):
    op = np.asarray(open_cells, dtype=bool)
    inner = op.copy()
    for a in range(op.ndim):
        inner[(slice(None),) * a + (0,)] = False
        inner[(slice(None),) * a + (-1,)] = False
        inner &= np.roll(op, 1, axis=a) & np.roll(op, -1, axis=a)
    return inner


@dataclass(frozen=True)
class SobolevReport:
    p: float
    lp_norm: float
    grad_lp_norm: float
    w1p_norm: float
    sharp_lp_norm: float = None
    c1p_norm: float = None

    def as_dict(self):
        return {k: (None if v is None else float(v)) for k, v in self.__dict__.items()}


def sobolev_report(u, mask=None, p=2, sharp=False, radii=None):
    """Grid ``W^{1,p}`` norm of ``u`` on the open cells of ``mask``.

    ``||u||_p + sum_i ||d_i u||_p``. With ``sharp`` the sharp maximal norm of
    ``u`` relative to the open cells is added as well.
    """
    p = check_exponent(p, allow_one=False)
    grid = u.grid
    vals = check_grid_values(u.values, grid)
    mask = u.mask if mask is None else mask
    op = np.ones(grid.shape, dtype=bool) if mask is None else mask.open
    if not interior_cells(op).any():
        raise DegenerateDomainError("mask has no interior cell")
    vol = grid.cell_volume
    lp = lp_norm(vals[op], p, vol)
    grads = grid_gradient(vals, op, grid.spacing)
    glp = float(sum(lp_norm(g[op], p, vol) for g in grads))
    sharp_lp = c1p = None
    if sharp:
        field = ScalarField(grid, np.where(op, vals, 0.0))
        us = sharp_maximal(field, op, radii)
        sharp_lp = lp_norm(us.values[op], p, vol)
        c1p = lp + sharp_lp
    return SobolevReport(p, lp, glp, lp + glp, sharp_lp, c1p)
