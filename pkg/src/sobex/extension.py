"""Linear extension operator ``Eu = u on S, sum_Q phi_Q P_{H_Q} u off S``.

The operator is stored factored as ``E = D + Phi P``: ``D`` holds identity
rows on ``S`` and averaging rows on the contact layer, ``Phi`` holds the
partition values (target cells x cubes) and ``P`` the quasi-cube means
(cubes x source cells). The dense product is only formed on request.
"""

from dataclasses import dataclass, field
import json
import warnings

import numpy as np
from scipy import ndimage, sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_exponent, check_grid_values
from .errors import RegularityViolationError, ShapeMismatchError
from .grid import Cube, DomainMask, GridSpec, ScalarField, mask_for_shape, neighbour_offsets
from .local import sobolev_report
from .partition import build_partition
from .quasicubes import build_quasicubes
from .whitney import decompose

BOUNDARY_MODES = ("trace", "zero", "given")


def fill_boundary(values, mask, mode="trace"):
    """Values on the closed cells of ``mask`` from samples on its open cells.

    ``trace`` gives each boundary-layer cell the mean of its open 3^n
    neighbours, ``zero`` sets the layer to 0 and ``given`` keeps the input
    values there. Cells outside ``S`` are zeroed.
    """
    vals = check_grid_values(values, mask.grid)
    return fill_boundary_batch(vals[..., None], mask, mode)[..., 0]


def fill_boundary_batch(values, mask, mode="trace"):
    """:func:`fill_boundary` applied to every trailing slice of ``values`` (grid shape + (k,))."""
    if mode not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
    n = mask.grid.dim
    vals = np.asarray(values, dtype=float)
    vals = vals.reshape(mask.grid.shape + (-1,))
    closed = mask.closed[..., None]
    out = np.where(closed, vals, 0.0)
    layer = mask.boundary_layer
    if mode == "zero":
        out[layer] = 0.0
    elif mode == "trace" and layer.any():
        kernel = np.ones((3,) * n + (1,))
        num = ndimage.correlate(np.where(mask.open[..., None], vals, 0.0), kernel, mode="constant")
        den = ndimage.correlate(mask.open.astype(float), np.ones((3,) * n), mode="constant")
        out[layer] = num[layer] / den[layer][:, None]
    return out


@dataclass(frozen=True, eq=False)
class ExtensionMap:
    source: DomainMask
    target: GridSpec
    qfam: object
    basis: object
    D: sparse.csr_matrix
    Phi: sparse.csr_matrix
    P: sparse.csr_matrix
    offset: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return (self.target.n_cells, self.source.grid.n_cells)

    @property
    def weights(self):
        """Materialised sparse matrix (target cells x source cells)."""
        w = self._cache.get("weights")
        if w is None:
            w = (self.D + self.Phi @ self.P).tocsr()
            w.sum_duplicates()
            w.eliminate_zeros()
            self._cache["weights"] = w
        return w

    def apply_vector(self, v):
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.shape[1]:
            raise ShapeMismatchError(f"source vector has {v.size} entries, expected {self.shape[1]}")
        return self.D @ v + self.Phi @ (self.P @ v)

    def apply_matrix(self, V):
        """Columns of ``V`` are source vectors."""
        V = np.asarray(V, dtype=float)
        if V.shape[0] != self.shape[1]:
            raise ShapeMismatchError("source dimension mismatch")
        return self.D @ V + self.Phi @ (self.P @ V)

    def source_in_target(self):
        """Target flat indices of source cells that lie in the window (or -1)."""
        src = self.source.grid
        w = np.asarray(np.unravel_index(np.arange(self.target.n_cells), self.target.shape)).T
        g = w + self.offset
        ok = np.all((g >= 0) & (g < np.asarray(src.shape)), axis=1)
        out = np.full(self.target.n_cells, -1, dtype=np.int64)
        out[ok] = np.ravel_multi_index(tuple(g[ok].T), src.shape)
        return out

    def restrict(self, values_on_target, which="closed"):
        """Samples of a window field at the cells of ``S`` (mask-grid layout, 0 elsewhere)."""
        t2s = self.source_in_target()
        vals = np.asarray(values_on_target).ravel()
        out = np.zeros(self.source.grid.n_cells)
        ok = t2s >= 0
        out[t2s[ok]] = vals[ok]
        keep = self.source.closed if which == "closed" else self.source.open
        return np.where(keep.ravel(), out, 0.0).reshape(self.source.grid.shape)

    def gradient_at(self, points, source_values):
        """Analytic gradient of ``sum_Q phi_Q P_Q u`` at points off ``S`` and the contact layer."""
        pq = self.P @ np.asarray(source_values, dtype=float).ravel()
        rows, cubes, _, grads = self.basis.gradients(points)
        out = np.zeros((len(np.atleast_2d(points)), self.target.dim))
        np.add.at(out, rows, grads * pq[cubes][:, None])
        return out

    def stats(self):
        w = self.weights
        support = np.diff(w.indptr)
        layer = (support > 0) & ~self._cache["s_mask"]
        return {
            "rows": int(w.shape[0]),
            "cols": int(w.shape[1]),
            "nnz": int(w.nnz),
            "max_row_support": int(support.max()) if support.size else 0,
            "layer_volume": float(layer.sum() * self.target.cell_volume),
        }

    def dump_stats(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.stats(), fh, sort_keys=True, indent=1)


def assemble(qfam, basis, target=None):
    """Assemble the factored extension map over ``target`` (defaults to the window grid)."""
    fam = qfam.family
    if basis.family is not fam:
        raise ValueError("quasi-cubes and partition come from different Whitney families")
    mask = fam.mask
    src = mask.grid
    h, n = src.spacing, src.dim
    target = GridSpec.covering(fam.window, h) if target is None else target
    if target.spacing != h:
        raise ValueError("target grid must share the mask spacing")
    offset = src.lattice_offset(target.lo)
    nt = target.n_cells
    w = np.asarray(np.unravel_index(np.arange(nt), target.shape)).T
    g = w + offset
    on_src = np.all((g >= 0) & (g < np.asarray(src.shape)), axis=1)
    src_flat = np.full(nt, -1, dtype=np.int64)
    src_flat[on_src] = np.ravel_multi_index(tuple(g[on_src].T), src.shape)
    in_s = np.zeros(nt, dtype=bool)
    in_s[on_src] = mask.closed.ravel()[src_flat[on_src]]

    # contact layer cells are stored relative to the window lattice
    win_off = src.lattice_offset(fam.window.lo)
    contact_g = fam.contact + win_off
    c_w = contact_g - offset
    ok = np.all((c_w >= 0) & (c_w < np.asarray(target.shape)), axis=1)
    contact_t = np.ravel_multi_index(tuple(c_w[ok].T), target.shape) if ok.any() else \
        np.zeros(0, dtype=np.int64)
    contact_g = contact_g[ok]

    d_rows = [np.flatnonzero(in_s)]
    d_cols = [src_flat[in_s]]
    d_vals = [np.ones(int(in_s.sum()))]
    if len(contact_t):
        nb_rows, nb_cols = [], []
        for off in neighbour_offsets(n):
            q = contact_g + off
            inside = np.all((q >= 0) & (q < np.asarray(src.shape)), axis=1)
            hit = np.zeros(len(q), dtype=bool)
            hit[inside] = mask.closed[tuple(q[inside].T)]
            nb_rows.append(contact_t[hit])
            nb_cols.append(np.ravel_multi_index(tuple(q[hit].T), src.shape))
        nb_rows = np.concatenate(nb_rows)
        nb_cols = np.concatenate(nb_cols)
        cnt = np.bincount(nb_rows, minlength=nt)
        d_rows.append(nb_rows)
        d_cols.append(nb_cols)
        d_vals.append(1.0 / cnt[nb_rows])
    D = sparse.csr_matrix(
        (np.concatenate(d_vals), (np.concatenate(d_rows), np.concatenate(d_cols))),
        shape=(nt, src.n_cells),
    )

    free = ~in_s
    free[contact_t] = False
    rows_t = np.flatnonzero(free)
    centers = target.centers()[rows_t]
    r, cubes, vals = basis.values(centers)
    Phi = sparse.csr_matrix((vals, (rows_t[r], cubes)), shape=(nt, len(fam)))

    if qfam.violations:
        used = np.zeros(len(fam), dtype=bool)
        used[cubes] = True
        bad = [c for c in qfam.violations if used[c]]
        if bad:
            raise RegularityViolationError("located cubes have empty quasi-cubes", bad)

    sizes = np.diff(qfam.member_ptr)
    p_rows = np.repeat(np.arange(len(fam)), sizes)
    p_vals = np.repeat(np.where(sizes > 0, 1.0 / np.maximum(sizes, 1), 0.0), sizes)
    P = sparse.csr_matrix((p_vals, (p_rows, qfam.member_idx)), shape=(len(fam), src.n_cells))
    emap = ExtensionMap(mask, target, qfam, basis, D, Phi, P, offset)
    emap._cache["s_mask"] = in_s
    return emap


def apply(emap, u, boundary="trace"):
    """``Eu`` on the target grid; ``u`` is a field on the mask grid."""
    grid = emap.source.grid
    vals = u.values if isinstance(u, ScalarField) else u
    vals = check_grid_values(vals, grid)
    filled = fill_boundary(vals, emap.source, boundary)
    out = emap.apply_vector(filled.ravel())
    return ScalarField(emap.target, out.reshape(emap.target.shape))


def build_extension(mask, window, epsilon=0.5, delta_S=np.inf, strict=True):
    """Whitney family, partition, quasi-cubes and the assembled map in one call."""
    fam = decompose(mask, window)
    basis = build_partition(fam)
    qfam = build_quasicubes(fam, mask, epsilon, delta_S, strict=strict)
    return assemble(qfam, basis)


@dataclass(frozen=True)
class OperatorNormReport:
    p: float
    ratios: list
    max_ratio: float
    names: list = field(default_factory=list)
    refinement_drift: float = None

    def as_dict(self):
        return {
            "p": self.p, "ratios": [float(r) for r in self.ratios], "names": list(self.names),
            "max_ratio": float(self.max_ratio),
            "refinement_drift": None if self.refinement_drift is None else float(self.refinement_drift),
        }


def _sample(item, mask):
    if isinstance(item, ScalarField):
        return getattr(item, "name", None), item
    name = getattr(item, "name", getattr(item, "__name__", "u"))
    vals = np.asarray(item(mask.grid.centers()), dtype=float).reshape(mask.grid.shape)
    return name, ScalarField(mask.grid, np.where(mask.open, vals, 0.0), mask)


def operator_norm_study(emap, suite, p, boundary="trace", reference=None):
    """Ratios ``||Eu||_{W^{1,p}(window)} / ||u||_{W^{1,p}(Omega)}`` over a suite.

    ``suite`` items are callables on points (or fields on the mask grid).
    With ``reference`` (a report at the coarser level) the relative change of
    ``max_ratio`` is recorded as ``refinement_drift``.
    """
    p = check_exponent(p, allow_one=False)
    ratios, names = [], []
    for item in suite:
        name, u = _sample(item, emap.source)
        base = sobolev_report(u, emap.source, p).w1p_norm
        if base == 0:
            warnings.warn(f"skipping zero-norm input {name}")
            continue
        eu = apply(emap, u, boundary)
        ratios.append(sobolev_report(eu, None, p).w1p_norm / base)
        names.append(name)
    mx = max(ratios) if ratios else float("nan")
    drift = None
    if reference is not None:
        drift = abs(mx - reference.max_ratio) / reference.max_ratio
    return OperatorNormReport(p, ratios, mx, names, drift)


class WhitneyExtension(TransformerMixin, BaseEstimator):
    """Extension of grid functions from a domain to a cubic window.

    ``fit`` rasterises ``domain`` at ``spacing``, decomposes the window and
    assembles the operator. ``transform`` maps rows of samples on the mask
    grid to rows of samples on the window grid.

    Parameters
    ----------
    domain : shape object or DomainMask
    spacing : float
        Cell width ``h`` (ignored when ``domain`` is a mask).
    window : Cube, optional
        Window cube; defaults to the mask's bounding cube dilated by 4.
    epsilon, delta_S : quasi-cube parameters.
    boundary : {"trace", "zero", "given"}
    """

    def __init__(self, domain=None, spacing=1 / 64, window=None, epsilon=0.5,
                 delta_S=0.25, boundary="trace"):
        self.domain = domain
        self.spacing = spacing
        self.window = window
        self.epsilon = epsilon
        self.delta_S = delta_S
        self.boundary = boundary

    def _mask(self):
        if isinstance(self.domain, DomainMask):
            return self.domain
        if self.domain is None:
            raise ValueError("domain is required")
        return mask_for_shape(self.domain, self.spacing)

    def fit(self, X=None, y=None):
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        mask = self._mask()
        window = self.window if self.window is not None else default_window(mask)
        self.mask_ = mask
        self.map_ = build_extension(mask, window, self.epsilon, self.delta_S)
        self.n_features_in_ = mask.grid.n_cells
        if X is not None:
            check_array(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatchError(
                f"X has {X.shape[1]} features, the mask grid has {self.n_features_in_}")
        grid = self.mask_.grid
        filled = fill_boundary_batch(X.T.reshape(grid.shape + (-1,)), self.mask_, self.boundary)
        return self.map_.apply_matrix(filled.reshape(grid.n_cells, -1)).T

    def restrict(self, Y):
        """Inverse direction on ``S``: window rows back to mask-grid rows."""
        check_is_fitted(self, "map_")
        Y = check_array(Y, dtype=float)
        return np.stack([self.map_.restrict(r).ravel() for r in Y])


def default_window(mask, factor=4.0):
    """Lattice-aligned power-of-two window around ``mask`` covering ``factor`` times its bounding cube."""
    cube = mask.bounding_cube()
    grid = mask.grid
    h = grid.spacing
    cells = int(np.ceil(factor * cube.side / h))
    k = 1
    while k < cells:
        k *= 2
    idx = np.round((cube.center - grid.lo) / h - k / 2)
    lo = grid.lo + idx * h
    return Cube(lo + k * h / 2, k * h / 2)
