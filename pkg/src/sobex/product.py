"""Extension from a product of domains, one factor at a time.

Stage one extends every ``y``-slice in the first factor with the map of
``Omega_1``; stage two transposes the factors and does the same with the map
of ``Omega_2``. Fields on ``grid_x x grid_y`` are stored as arrays of shape
``grid_x.shape + grid_y.shape``.
"""

from dataclasses import dataclass
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_exponent
from .errors import ShapeMismatchError
from .extension import build_extension, default_window, fill_boundary_batch
from .grid import DomainMask, GridSpec, ScalarField, lp_norm, mask_for_shape, product_mask
from .local import grid_gradient, sobolev_report


def _full_mask(grid):
    return DomainMask(grid, np.ones(grid.shape, dtype=bool), np.ones(grid.shape, dtype=bool))


@dataclass(frozen=True, eq=False)
class ProductField:
    grid_x: GridSpec
    grid_y: GridSpec
    values: np.ndarray
    mask_x: DomainMask = None
    mask_y: DomainMask = None

    def __post_init__(self):
        shape = self.grid_x.shape + self.grid_y.shape
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != shape:
            if vals.size != int(np.prod(shape)):
                raise ShapeMismatchError(f"values of shape {vals.shape} do not fit {shape}")
            vals = vals.reshape(shape)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid_x, grid_y, func, mask_x=None, mask_y=None, support=True):
        """Sample ``func(x, y)`` (x: (k, n), y: (k, m)) at all cell pairs; zero off the product of open cells."""
        cx, cy = grid_x.centers(), grid_y.centers()
        X = np.repeat(cx, len(cy), axis=0)
        Y = np.tile(cy, (len(cx), 1))
        vals = np.asarray(func(X, Y), dtype=float).reshape(grid_x.shape + grid_y.shape)
        out = cls(grid_x, grid_y, vals, mask_x, mask_y)
        return out.restricted() if support else out

    @property
    def n(self):
        return self.grid_x.dim

    @property
    def m(self):
        return self.grid_y.dim

    @property
    def grid(self):
        return GridSpec(self.grid_x.origin + self.grid_y.origin, self.grid_x.spacing,
                        self.grid_x.extents + self.grid_y.extents)

    @property
    def open_cells(self):
        ox = self.mask_x.open if self.mask_x is not None else np.ones(self.grid_x.shape, bool)
        oy = self.mask_y.open if self.mask_y is not None else np.ones(self.grid_y.shape, bool)
        return np.multiply.outer(ox, oy)

    def restricted(self):
        return ProductField(self.grid_x, self.grid_y, np.where(self.open_cells, self.values, 0.0),
                            self.mask_x, self.mask_y)

    def matrix(self):
        """Values as (x cells, y cells)."""
        return self.values.reshape(self.grid_x.n_cells, self.grid_y.n_cells)

    def y_slice(self, y_index):
        """The field ``u_y`` on ``grid_x`` at a multi-index of ``grid_y``."""
        sl = (Ellipsis,) + tuple(int(i) for i in y_index)
        return ScalarField(self.grid_x, self.values[sl], self.mask_x)

    def x_slice(self, x_index):
        sl = tuple(int(i) for i in x_index)
        return ScalarField(self.grid_y, self.values[sl], self.mask_y)

    def transpose(self):
        n, m = self.n, self.m
        axes = tuple(range(n, n + m)) + tuple(range(n))
        return ProductField(self.grid_y, self.grid_x, np.transpose(self.values, axes),
                            self.mask_y, self.mask_x)

    def as_scalar_field(self):
        mask = None
        if self.mask_x is not None and self.mask_y is not None:
            mask = product_mask(self.mask_x, self.mask_y)
        return ScalarField(self.grid, self.values, mask)

    def sobolev(self, p):
        """Grid ``W^{1,p}`` report over the product of open cells."""
        f = self.as_scalar_field()
        mask = f.mask if f.mask is not None else DomainMask(
            f.grid, self.open_cells, self.open_cells)
        return sobolev_report(f, mask, p)


@dataclass(frozen=True)
class SliceIndex:
    axis: int
    complement_coords: tuple
    runs: tuple  # (start, stop) half-open index ranges along ``axis``


def fiber_runs(mask, axis):
    """Maximal runs of open cells along ``axis`` for every line of the mask."""
    op = np.moveaxis(mask.open, axis, -1)
    lines = op.reshape(-1, op.shape[-1])
    comp_shape = op.shape[:-1]
    out = []
    for k, line in enumerate(lines):
        if not line.any():
            continue
        d = np.diff(np.concatenate([[0], line.astype(np.int8), [0]]))
        starts = np.flatnonzero(d == 1)
        stops = np.flatnonzero(d == -1)
        comp = tuple(int(i) for i in np.unravel_index(k, comp_shape)) if comp_shape else ()
        out.append(SliceIndex(axis, comp, tuple(zip(starts.tolist(), stops.tolist()))))
    return out


def fiber_derivative(values, runs_list, spacing, axis, n_lead):
    """Finite differences along ``axis`` of the trailing factor, inside fiber runs only.

    Central inside a run, one-sided at its ends; single-cell runs are left at
    zero. ``values`` has ``n_lead`` leading axes (the first factor).
    Returns ``(derivative, skipped_runs)``.
    """
    v = np.moveaxis(values, n_lead + axis, -1)
    out = np.zeros_like(v)
    skipped = 0
    for s in runs_list:
        idx = (Ellipsis,) + s.complement_coords
        line = v[idx]
        dl = out[idx]
        for a, b in s.runs:
            if b - a < 2:
                skipped += 1
                continue
            seg = line[..., a:b]
            d = np.empty_like(seg)
            d[..., 1:-1] = (seg[..., 2:] - seg[..., :-2]) / (2 * spacing)
            d[..., 0] = (seg[..., 1] - seg[..., 0]) / spacing
            d[..., -1] = (seg[..., -1] - seg[..., -2]) / spacing
            dl[..., a:b] = d
    return np.moveaxis(out, -1, n_lead + axis), skipped


def extend_first_factor(u, map1, boundary="trace"):
    """Apply ``map1`` to every slice ``u_y`` with ``y`` an open cell of the second factor."""
    if map1.source.grid != u.grid_x:
        raise ShapeMismatchError("map1 was assembled on a different grid")
    oy = u.mask_y.open if u.mask_y is not None else np.ones(u.grid_y.shape, dtype=bool)
    cols = np.flatnonzero(oy.ravel())
    V = u.matrix()[:, cols]
    filled = fill_boundary_batch(V.reshape(u.grid_x.shape + (-1,)), map1.source, boundary)
    out = np.zeros((map1.target.n_cells, u.grid_y.n_cells))
    out[:, cols] = map1.apply_matrix(filled.reshape(u.grid_x.n_cells, -1))
    return ProductField(map1.target, u.grid_y, out.reshape(map1.target.shape + u.grid_y.shape),
                        None, u.mask_y)


def extend_product(u, map1, map2, boundary="trace"):
    """Two-stage extension to ``target_x x target_y``; equals ``u`` on the product of open cells."""
    stage1 = extend_first_factor(u, map1, boundary)
    flipped = stage1.transpose()
    stage2 = extend_first_factor(flipped, map2, boundary)
    back = stage2.transpose()
    return ProductField(back.grid_x, back.grid_y, back.values, None, None)


def x_derivative_check(u, map1, i, p=2, boundary="trace"):
    """Compare the x-derivative of the stage-one field with the per-slice derivatives of ``Eu_y``."""
    ext = extend_first_factor(u, map1, boundary)
    n = u.n
    full = np.ones(map1.target.shape, dtype=bool)
    h = u.grid_x.spacing
    oy = u.mask_y.open if u.mask_y is not None else np.ones(u.grid_y.shape, bool)
    joint = axis_difference(ext.values, i, h)
    worst = 0.0
    for yi in np.argwhere(oy):
        sl = (Ellipsis,) + tuple(yi)
        col = ext.values[sl]
        g = grid_gradient(col, full, h)[i]
        worst = max(worst, float(np.max(np.abs(g - joint[sl]))))
    # norm inequality of the one-factor step, restricted to y in Omega_2
    su = u.restricted()
    sel = np.broadcast_to(oy, ext.values.shape)
    vol = h ** (n + u.m)
    lhs = lp_norm(joint[sel], p, vol) ** p
    du = _axis_gradient(su, i)
    rhs = lp_norm(su.values[su.open_cells], p, vol) ** p + lp_norm(du[su.open_cells], p, vol) ** p
    return {"axis": i, "max_discrepancy": worst, "step_constant": lhs / rhs if rhs else math.nan}


def axis_difference(values, axis, spacing):
    """Central differences along ``axis``, one-sided at the two ends."""
    v = np.moveaxis(values, axis, 0)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2 * spacing)
    d[0] = (v[1] - v[0]) / spacing
    d[-1] = (v[-1] - v[-2]) / spacing
    return np.moveaxis(d, 0, axis)


def _axis_gradient(u, i):
    """Derivative along x-axis ``i`` of a product field inside its open cells."""
    op = u.open_cells
    g = grid_gradient(u.values, op, u.grid_x.spacing)
    return g[i]


def layer_rows(map1):
    """Target cells where the weights of ``map1`` sum to one."""
    ones = np.ones(map1.source.grid.n_cells)
    filled = fill_boundary_batch(ones.reshape(map1.source.grid.shape + (1,)), map1.source).ravel()
    total = map1.apply_vector(filled)
    return np.abs(total - 1.0) <= 1e-12


def commutation_check(u, du_dy, map1, j, boundary="trace"):
    """``max |d_{y_j} E_1 u - E_1 d_{y_j} u|`` over (layer of map1) x Omega_2.

    ``u`` and ``du_dy`` are :class:`ProductField` samples of a C^1 function and
    of its exact ``y_j`` derivative on the same grids.
    """
    runs = fiber_runs(u.mask_y, j)
    ext = extend_first_factor(u, map1, boundary)
    d1, skipped = fiber_derivative(ext.values, runs, u.grid_y.spacing, j, map1.target.dim)
    d2 = extend_first_factor(du_dy, map1, boundary).values
    layer = layer_rows(map1).reshape(map1.target.shape)
    sel = np.multiply.outer(layer, u.mask_y.open)
    res = float(np.max(np.abs(d1 - d2)[sel])) if sel.any() else 0.0
    return {"axis": j, "residual": res, "skipped_runs": skipped, "layer_cells": int(layer.sum())}


def fitted_order(spacings, residuals):
    """Least-squares slope of ``log residual`` against ``log h``."""
    hs = np.log(np.asarray(spacings, dtype=float))
    rs = np.log(np.asarray(residuals, dtype=float))
    slope, _ = np.polyfit(hs, rs, 1)
    return float(slope)


def restriction_converse_check(w, mask_x, u, ball=None, p=2):
    """Slices ``w(., y)`` for ``y`` in ``ball`` must restrict to ``u`` on the open cells of ``mask_x``.

    ``w`` lives on a window grid in x; ``u`` is a field on ``mask_x``'s grid.
    ``ball`` is a boolean array over ``w.grid_y`` (defaults to all its cells).
    """
    p = check_exponent(p, allow_one=False)
    gx = w.grid_x
    off = mask_x.grid.lattice_offset(gx.lo)
    src = np.asarray(np.unravel_index(np.flatnonzero(mask_x.open), mask_x.grid.shape)).T
    tgt = src - off
    if np.any(tgt < 0) or np.any(tgt >= np.asarray(gx.shape)):
        raise ValueError("the x window does not cover the open cells of mask_x")
    t_flat = np.ravel_multi_index(tuple(tgt.T), gx.shape)
    u_open = np.asarray(u.values if isinstance(u, ScalarField) else u).ravel()[
        np.flatnonzero(mask_x.open)]
    ball = np.ones(w.grid_y.shape, dtype=bool) if ball is None else np.asarray(ball, bool)
    M = w.matrix()
    passed, norms = 0, []
    full = _full_mask(gx)
    for yk in np.flatnonzero(ball.ravel()):
        col = M[:, yk]
        if np.array_equal(col[t_flat], u_open):
            passed += 1
        norms.append(sobolev_report(ScalarField(gx, col.reshape(gx.shape)), full, p).w1p_norm)
    total = int(ball.sum())
    vol_b = total * w.grid_y.cell_volume
    # Fubini: the p-th power of the product L^p norm over B is the sum of slice powers
    slice_lp = [lp_norm(M[:, yk], p, gx.cell_volume) for yk in np.flatnonzero(ball.ravel())]
    joint = lp_norm(M[:, ball.ravel()], p, gx.cell_volume * w.grid_y.cell_volume)
    fubini = lp_norm(np.asarray(slice_lp), p, w.grid_y.cell_volume)
    return {
        "slices": total,
        "pass_fraction": passed / total if total else 1.0,
        "max_slice_norm": float(max(norms)) if norms else 0.0,
        "mean_slice_norm": float(np.mean(norms)) if norms else 0.0,
        "ball_volume": vol_b,
        "fubini_gap": abs(joint - fubini) / joint if joint else 0.0,
    }


def fubini_gap(field, p):
    """Relative gap between the product ``L^p`` norm and the norm of slice norms."""
    M = field.matrix()
    vx, vy = field.grid_x.cell_volume, field.grid_y.cell_volume
    joint = lp_norm(M, p, vx * vy)
    per = np.array([lp_norm(M[:, k], p, vx) for k in range(M.shape[1])])
    nested = lp_norm(per, p, vy)
    return abs(joint - nested) / joint if joint else 0.0


class ProductExtension(TransformerMixin, BaseEstimator):
    """Extension of fields on ``Omega_1 x Omega_2`` to a product of windows.

    Rows of ``X`` are flattened samples on ``grid_x x grid_y``; rows of the
    output are flattened samples on ``window_x x window_y``.
    """

    def __init__(self, factor1=None, factor2=None, spacing=1 / 64, window1=None, window2=None,
                 epsilon=0.5, delta_S=0.25, boundary="trace"):
        self.factor1 = factor1
        self.factor2 = factor2
        self.spacing = spacing
        self.window1 = window1
        self.window2 = window2
        self.epsilon = epsilon
        self.delta_S = delta_S
        self.boundary = boundary

    def _mask(self, domain):
        if isinstance(domain, DomainMask):
            return domain
        return mask_for_shape(domain, self.spacing)

    def fit(self, X=None, y=None):
        if self.factor1 is None or self.factor2 is None:
            raise ValueError("both factors are required")
        mx, my = self._mask(self.factor1), self._mask(self.factor2)
        if mx.grid.spacing != my.grid.spacing:
            raise ValueError("factors must share the grid spacing")
        wx = self.window1 if self.window1 is not None else default_window(mx)
        wy = self.window2 if self.window2 is not None else default_window(my)
        self.mask_x_, self.mask_y_ = mx, my
        self.map1_ = build_extension(mx, wx, self.epsilon, self.delta_S)
        self.map2_ = build_extension(my, wy, self.epsilon, self.delta_S)
        self.n_features_in_ = mx.grid.n_cells * my.grid.n_cells
        if X is not None:
            check_array(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "map1_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatchError(
                f"X has {X.shape[1]} features, the product grid has {self.n_features_in_}")
        rows = []
        for r in X:
            u = ProductField(self.mask_x_.grid, self.mask_y_.grid, r, self.mask_x_, self.mask_y_)
            rows.append(extend_product(u, self.map1_, self.map2_, self.boundary).values.ravel())
        return np.stack(rows)

