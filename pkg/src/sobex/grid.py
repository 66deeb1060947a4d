"""Uniform grids, uniform-norm cubes, rasterized domains and sampled fields."""

from dataclasses import dataclass, field
import hashlib
import itertools
import math

import numpy as np
from scipy import ndimage

from ._validation import check_exponent, check_grid_values, check_points
from .errors import EmptyDomainError
from .shapes import load_shape

_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class Cube:
    """Closed ball ``{y : |y - center|_inf <= half_side}``."""

    center: tuple
    half_side: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        r = float(self.half_side)
        if not r > 0:
            raise ValueError(f"half_side must be positive, got {r}")
        object.__setattr__(self, "half_side", r)

    @property
    def dim(self):
        return len(self.center)

    @property
    def side(self):
        return 2.0 * self.half_side

    @property
    def diam(self):
        # uniform-norm diameter
        return 2.0 * self.half_side

    @property
    def volume(self):
        return self.side ** self.dim

    @property
    def lo(self):
        return np.asarray(self.center) - self.half_side

    @property
    def hi(self):
        return np.asarray(self.center) + self.half_side

    def dilate(self, factor):
        return Cube(self.center, self.half_side * factor)

    def star(self):
        return self.dilate(9.0 / 8.0)

    def contains(self, points, tol=0.0):
        x = check_points(points, self.dim)
        return np.max(np.abs(x - np.asarray(self.center)), axis=1) <= self.half_side + tol


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred uniform grid; cell ``i`` has centre ``origin + (i + 1/2) h``."""

    origin: tuple
    spacing: float
    extents: tuple

    def __post_init__(self):
        extents = tuple(int(e) for e in np.atleast_1d(self.extents))
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if len(origin) != len(extents):
            raise ValueError("origin and extents must have the same length")
        if any(e < 1 for e in extents):
            raise ValueError("extents must be positive")
        if math.prod(extents) >= 2 ** 31:
            raise ValueError("grid has too many cells")
        h = float(self.spacing)
        if not h > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "spacing", h)

    @classmethod
    def covering(cls, cube, spacing):
        """Grid whose cells tile ``cube`` exactly."""
        n = cube.side / spacing
        if abs(n - round(n)) > _LATTICE_TOL:
            raise ValueError("cube side is not a multiple of the spacing")
        return cls(tuple(cube.lo), spacing, (int(round(n)),) * cube.dim)

    @property
    def dim(self):
        return len(self.extents)

    @property
    def shape(self):
        return self.extents

    @property
    def n_cells(self):
        return math.prod(self.extents)

    @property
    def cell_volume(self):
        return self.spacing ** self.dim

    @property
    def lo(self):
        return np.asarray(self.origin)

    @property
    def hi(self):
        return self.lo + self.spacing * np.asarray(self.extents)

    def axis_centers(self, axis):
        return self.origin[axis] + (np.arange(self.extents[axis]) + 0.5) * self.spacing

    def centers(self, flat_index=None):
        """Cell centres as an (m, dim) array, all cells in C order by default."""
        if flat_index is None:
            mesh = np.meshgrid(*[self.axis_centers(a) for a in range(self.dim)], indexing="ij")
            return np.stack([m.ravel() for m in mesh], axis=1)
        idx = np.asarray(np.unravel_index(np.asarray(flat_index), self.extents)).T
        return self.lo + (idx + 0.5) * self.spacing

    def cell_of(self, points):
        """Integer multi-index of the cell containing each point, and an in-grid flag."""
        x = check_points(points, self.dim)
        idx = np.floor((x - self.lo) / self.spacing).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.extents)), axis=1)
        return idx, inside

    def flat(self, multi_index):
        return np.ravel_multi_index(tuple(np.asarray(multi_index).T), self.extents)

    def lattice_offset(self, point):
        """Integer ``k`` with ``point == origin + k h``; raises if off-lattice."""
        k = (np.asarray(point, dtype=float) - self.lo) / self.spacing
        if np.any(np.abs(k - np.round(k)) > _LATTICE_TOL):
            raise ValueError(f"point {tuple(point)} is not on the grid lattice")
        return np.round(k).astype(np.int64)

    def refine(self, factor=2):
        return GridSpec(self.origin, self.spacing / factor, tuple(e * factor for e in self.extents))


def neighbour_offsets(dim, include_zero=False):
    offs = np.array(list(itertools.product((-1, 0, 1), repeat=dim)), dtype=np.int64)
    if not include_zero:
        offs = offs[np.any(offs != 0, axis=1)]
    return offs


def _frozen(arr, dtype=bool):
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Rasterized domain.

    ``open`` marks cells whose centre lies in the open set; ``closed`` adds the
    layer of cells adjacent (in the 3^n neighbourhood) to an open cell and is
    the grid version of the closure ``S``.
    """

    grid: GridSpec
    open: np.ndarray
    closed: np.ndarray

    def __post_init__(self):
        op = _frozen(np.asarray(self.open).reshape(self.grid.shape))
        cl = _frozen(np.asarray(self.closed).reshape(self.grid.shape))
        if np.any(op & ~cl):
            raise ValueError("open cells must be a subset of closed cells")
        object.__setattr__(self, "open", op)
        object.__setattr__(self, "closed", cl)

    @classmethod
    def from_open(cls, grid, open_cells):
        op = np.asarray(open_cells, dtype=bool).reshape(grid.shape)
        structure = np.ones((3,) * grid.dim, dtype=bool)
        closed = ndimage.binary_dilation(op, structure=structure) | op
        return cls(grid, op, closed)

    @property
    def boundary_layer(self):
        return self.closed & ~self.open

    @property
    def open_cells(self):
        return np.flatnonzero(self.open)

    @property
    def closed_cells(self):
        return np.flatnonzero(self.closed)

    @property
    def measure(self):
        return np.count_nonzero(self.open) * self.grid.cell_volume

    def digest(self):
        h = hashlib.sha256()
        h.update(repr((self.grid.origin, self.grid.spacing, self.grid.extents)).encode())
        h.update(self.open.tobytes())
        h.update(self.closed.tobytes())
        return h.hexdigest()[:16]

    def bounding_cube(self):
        """Smallest uniform-norm cube containing all closed cells."""
        idx = np.argwhere(self.closed)
        lo = self.grid.lo + idx.min(axis=0) * self.grid.spacing
        hi = self.grid.lo + (idx.max(axis=0) + 1) * self.grid.spacing
        return Cube((lo + hi) / 2, float(np.max(hi - lo)) / 2)


def rasterize(shape, grid):
    """Rasterize the open set described by ``shape`` by cell-centre membership."""
    shape = load_shape(shape)
    if shape.dim != grid.dim:
        raise ValueError(f"shape is {shape.dim}-D but grid is {grid.dim}-D")
    inside = shape.contains(grid.centers(), closed=False)
    if not inside.any():
        raise EmptyDomainError("shape has no cell centre inside the grid")
    return DomainMask.from_open(grid, inside)


def rasterize_closed(shape, grid):
    """Rasterize a closed set, including sets with empty interior.

    A cell is kept when its closed box meets the set (up to the dilation
    accuracy of the primitive). Such masks have no boundary-layer invariant.
    """
    shape = load_shape(shape)
    centers = grid.centers()
    closed = shape.contains(centers, closed=True, tol=grid.spacing / 2)
    op = shape.contains(centers, closed=False)
    if op.any():
        closed |= DomainMask.from_open(grid, op).closed.ravel()
    if not closed.any():
        raise EmptyDomainError("closed set misses every cell of the grid")
    return DomainMask(grid, op.reshape(grid.shape), closed.reshape(grid.shape))


def mask_for_shape(shape, spacing, pad=2):
    """Rasterise ``shape`` on a grid padded by ``pad`` cells.

    The grid lattice is ``h Z^n`` shifted by ``shape.cell_shift`` cells, and
    degenerate shapes (empty interior) keep every cell their closure meets.
    """
    shape = load_shape(shape)
    h = float(spacing)
    shift = float(getattr(shape, "cell_shift", 0.0)) * h
    lo, hi = shape.bounding_box()
    lo = np.floor((np.asarray(lo, dtype=float) + shift) / h) * h - shift - pad * h
    hi = np.ceil((np.asarray(hi, dtype=float) + shift) / h) * h - shift + pad * h
    ext = tuple(int(round(e)) for e in (hi - lo) / h)
    grid = GridSpec(tuple(lo), h, ext)
    if getattr(shape, "degenerate", False):
        return rasterize_closed(shape, grid)
    return rasterize(shape, grid)


def product_mask(mask_x, mask_y):
    """Mask of ``Omega_1 x Omega_2`` on the product grid (equal spacings)."""
    gx, gy = mask_x.grid, mask_y.grid
    if not math.isclose(gx.spacing, gy.spacing):
        raise ValueError("product masks need equal spacings")
    grid = GridSpec(gx.origin + gy.origin, gx.spacing, gx.extents + gy.extents)
    op = np.multiply.outer(mask_x.open, mask_y.open)
    return DomainMask.from_open(grid, op)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Samples of a function at the cell centres of ``grid``."""

    grid: GridSpec
    values: np.ndarray
    mask: DomainMask = field(default=None)

    def __post_init__(self):
        vals = np.array(check_grid_values(self.values, self.grid), dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.mask is not None and self.mask.grid != self.grid:
            raise ValueError("mask lives on a different grid")

    @classmethod
    def from_function(cls, grid, func, mask=None):
        vals = np.asarray(func(grid.centers()), dtype=float).reshape(grid.shape)
        return cls(grid, vals, mask)

    def support(self, which="open"):
        if self.mask is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.mask.open if which == "open" else self.mask.closed

    def lp_norm(self, p, region=None):
        p = check_exponent(p)
        region = self.support() if region is None else np.asarray(region, dtype=bool)
        return lp_norm(self.values[region], p, self.grid.cell_volume)


def lp_norm(values, p, cell_volume):
    """Midpoint-rule L^p norm of cell samples."""
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0:
        return 0.0
    if math.isinf(p):
        return float(v.max())
    if p == 1:
        return float(v.sum() * cell_volume)
    if p == 2:
        return float(np.sqrt(np.dot(v.ravel(), v.ravel()) * cell_volume))
    vmax = v.max()
    if vmax == 0:
        return 0.0
    return float(vmax * (np.sum((v / vmax) ** p) * cell_volume) ** (1.0 / p))


def summed_volume_table(arr):
    """Zero-padded n-D cumulative sum, for O(1) box counts."""
    sat = np.asarray(arr, dtype=np.int64)
    for axis in range(sat.ndim):
        sat = np.cumsum(sat, axis=axis)
    return np.pad(sat, [(1, 0)] * sat.ndim)


def box_sums(sat, lo, hi):
    """Sum over integer boxes ``[lo, hi)`` (rows of ``lo``/``hi``), clipped to the array."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    ext = np.asarray(sat.shape) - 1
    lo = np.clip(lo, 0, ext)
    hi = np.clip(hi, 0, ext)
    hi = np.maximum(hi, lo)
    dim = sat.ndim
    total = np.zeros(len(lo), dtype=np.int64)
    for corner in itertools.product((0, 1), repeat=dim):
        idx = tuple(np.where(c, hi[:, a], lo[:, a]) for a, c in enumerate(corner))
        sign = -1 if (dim - sum(corner)) % 2 else 1
        total += sign * sat[idx]
    return total
