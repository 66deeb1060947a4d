"""Dyadic Whitney decomposition of ``window \\ S`` in the uniform norm.

Cubes are dyadic subcubes of a window cube that is aligned with the mask
lattice and has side ``2^L h``. All distances are computed exactly in cell
units: ``S`` is the union of the closed cells of the mask and every dyadic
cube is a union of cells, so ``dist(Q, S)`` is an integer multiple of ``h``.

The selection is top-down: a cube is kept as soon as ``diam Q <= dist(Q, S)``;
otherwise it is split. Because the parent of a kept cube failed,
``dist(Q, S) < 3 diam Q`` for every cube below the top level. Top-level cubes
with ``dist > 4 diam`` are artifacts of the finite window and are flagged as
clipped.

At the finest level (cubes of one cell) the cells that still touch ``S`` can
never satisfy the lower bound. They form the *contact layer* and are stored
separately; every other cell of ``window \\ S`` is covered exactly once.
"""

from dataclasses import dataclass
import json
import math

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_points
from .errors import CertificationError, CoverageError, InSetError, ResolutionExhaustedError
from .grid import Cube, box_sums, neighbour_offsets, summed_volume_table

STAR = 9.0 / 8.0


@dataclass(frozen=True, eq=False)
class WhitneyFamily:
    mask: object
    window: Cube
    n_levels: int
    levels: np.ndarray
    index: np.ndarray
    dist_cells: np.ndarray
    clipped: np.ndarray
    adj_ptr: np.ndarray
    adj_idx: np.ndarray
    contact: np.ndarray
    overlap: int
    star_overlap: int

    # --- geometry -------------------------------------------------------
    @property
    def spacing(self):
        return self.mask.grid.spacing

    @property
    def dim(self):
        return self.mask.grid.dim

    @property
    def window_lo(self):
        return self.window.lo

    @property
    def side_cells(self):
        return 2 ** (self.n_levels - self.levels)

    @property
    def lo_cells(self):
        return self.index * self.side_cells[:, None]

    @property
    def half_sides(self):
        return self.side_cells * self.spacing / 2.0

    @property
    def diams(self):
        return self.side_cells * self.spacing

    @property
    def centers(self):
        return self.window_lo + (self.lo_cells + self.side_cells[:, None] / 2.0) * self.spacing

    @property
    def dist_to_S(self):
        return self.dist_cells * self.spacing

    @property
    def lattice_offset(self):
        return self.mask.grid.lattice_offset(self.window_lo)

    def __len__(self):
        return len(self.levels)

    def cube(self, i):
        return Cube(self.centers[i], self.half_sides[i])

    def neighbors(self, i):
        """Indices ``K != Q`` with ``Q* n K*`` nonempty."""
        return self.adj_idx[self.adj_ptr[i]:self.adj_ptr[i + 1]]

    def contact_centers(self):
        return self.window_lo + (self.contact + 0.5) * self.spacing

    # --- point location --------------------------------------------------
    def _level_tables(self):
        tables = self.__dict__.get("_tables")
        if tables is None:
            tables = {}
            for lev in np.unique(self.levels):
                ids = np.flatnonzero(self.levels == lev)
                keys = _keys(self.index[ids], int(lev), self.dim)
                order = np.argsort(keys)
                tables[int(lev)] = (keys[order], ids[order])
            object.__setattr__(self, "_tables", tables)
        return tables

    def owner(self, points):
        """Index of a cube containing each point, or -1."""
        x = check_points(points, self.dim)
        rel = (x - self.window_lo) / self.spacing
        inside = np.all((rel >= 0) & (rel <= 2 ** self.n_levels), axis=1)
        out = np.full(len(x), -1, dtype=np.int64)
        for lev, (keys, ids) in self._level_tables().items():
            side = 2 ** (self.n_levels - lev)
            k = np.clip(np.floor(rel / side).astype(np.int64), 0, 2 ** lev - 1)
            key = _keys(k, lev, self.dim)
            pos = np.clip(np.searchsorted(keys, key), 0, len(keys) - 1)
            hit = inside & (keys[pos] == key) & (out < 0)
            out[hit] = ids[pos[hit]]
        return out

    def star_candidates(self, points):
        """Pairs ``(point_row, cube)`` with the point in ``Q*``, as two arrays."""
        x = check_points(points, self.dim)
        own = self.owner(x)
        rows, cubes = [], []
        have = own >= 0
        if have.any():
            r = np.flatnonzero(have)
            o = own[r]
            counts = self.adj_ptr[o + 1] - self.adj_ptr[o]
            rows.append(r)
            cubes.append(o)
            rows.append(np.repeat(r, counts))
            cubes.append(_gather_csr(self.adj_ptr, self.adj_idx, o))
        if (~have).any():
            # off the cubes: only one-cell cubes within h/16 can reach the point
            r = np.flatnonzero(~have)
            step = self.spacing / 12.0
            for off in neighbour_offsets(self.dim):
                o = self.owner(x[r] + off * step)
                ok = o >= 0
                rows.append(r[ok])
                cubes.append(o[ok])
        if not rows:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        rows = np.concatenate(rows)
        cubes = np.concatenate(cubes)
        pair = np.unique(np.stack([rows, cubes], axis=1), axis=0)
        rows, cubes = pair[:, 0], pair[:, 1]
        dev = np.max(np.abs(x[rows] - self.centers[cubes]), axis=1)
        keep = dev <= STAR * self.half_sides[cubes] * (1 + 1e-12)
        return rows[keep], cubes[keep]

    def in_set(self, points):
        x = check_points(points, self.dim)
        idx, inside = self.mask.grid.cell_of(x)
        out = np.zeros(len(x), dtype=bool)
        out[inside] = self.mask.closed[tuple(idx[inside].T)]
        return out

    # --- export ----------------------------------------------------------
    def to_records(self):
        centers, halves = self.centers, self.half_sides
        for i in range(len(self)):
            yield {
                "id": i,
                "center": [float(c) for c in centers[i]],
                "half_side": float(halves[i]),
                "level": int(self.levels[i]),
                "dist_to_S": float(self.dist_cells[i] * self.spacing),
                "clipped": bool(self.clipped[i]),
                "neighbor_ids": [int(k) for k in self.neighbors(i)],
            }

    def dump_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _keys(idx, level, dim):
    idx = np.asarray(idx, dtype=np.int64)
    key = np.zeros(len(idx), dtype=np.int64)
    for a in range(dim):
        key = key * (2 ** level) + idx[:, a]
    return key


def _gather_csr(ptr, idx, rows):
    counts = ptr[rows + 1] - ptr[rows]
    if counts.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.repeat(ptr[rows], counts)
    within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return idx[starts + within]


def window_levels(window, spacing):
    n = window.side / spacing
    L = int(round(math.log2(n)))
    if 2 ** L != int(round(n)) or abs(n - round(n)) > 1e-9:
        raise ValueError("window side must be a power-of-two multiple of the spacing")
    return L


def boundary_cells(mask):
    """Closed cells with a 3^n neighbour outside ``S`` (or on the grid edge)."""
    cl = np.pad(mask.closed, 1, constant_values=False)
    interior = np.ones(mask.grid.shape, dtype=bool)
    n = mask.grid.dim
    for off in neighbour_offsets(n):
        sl = tuple(slice(1 + o, 1 + o + e) for o, e in zip(off, mask.grid.shape))
        interior &= cl[sl]
    return np.argwhere(mask.closed & ~interior)


def decompose(mask, window, min_level=0, max_level=None, certify=True):
    """Whitney family of ``window \\ S`` for ``S`` = closed cells of ``mask``.

    ``max_level`` defaults to the one-cell level ``L``. A coarser finest level
    leaves cells away from ``S`` uncovered and raises
    :class:`ResolutionExhaustedError`.
    """
    grid = mask.grid
    h = grid.spacing
    n = grid.dim
    if window.dim != n:
        raise ValueError("window and mask dimensions differ")
    L = window_levels(window, h)
    max_level = L if max_level is None else int(max_level)
    if not 0 <= min_level <= max_level <= L:
        raise ValueError(f"need 0 <= min_level <= max_level <= {L}")
    off = grid.lattice_offset(window.lo)

    sat = summed_volume_table(mask.closed)
    total_s = int(np.count_nonzero(mask.closed))
    in_window = int(box_sums(sat, off[None, :], (off + 2 ** L)[None, :])[0])
    if in_window != total_s:
        raise ValueError("window must contain every cell of S")
    touches_edge = _touches_grid_edge(mask)
    if touches_edge and np.any((off > 0) | (off + 2 ** L < np.asarray(grid.shape))):
        raise ValueError("S touches the mask grid edge but the window extends past it")

    bcells = boundary_cells(mask)
    tree = cKDTree(bcells - off + 0.5)

    kept_idx, kept_lev, kept_dist = [], [], []
    residual = []
    idx = np.array(list(np.ndindex(*(2 ** min_level,) * n)), dtype=np.int64).reshape(-1, n)
    child_offsets = np.array(list(np.ndindex(*(2,) * n)), dtype=np.int64)
    for lev in range(min_level, max_level + 1):
        if len(idx) == 0:
            break
        s = 2 ** (L - lev)
        lo = idx * s
        count = box_sums(sat, lo + off, lo + off + s)
        full = count == s ** n
        d, _ = tree.query(lo + s / 2.0, p=np.inf)
        dist = np.where(count > 0, 0.0, np.maximum(0.0, d - s / 2.0 - 0.5))
        dist = np.round(dist).astype(np.int64)
        accept = (count == 0) & (dist >= s)
        kept_idx.append(idx[accept])
        kept_lev.append(np.full(accept.sum(), lev, dtype=np.int64))
        kept_dist.append(dist[accept])
        rest = idx[~accept & ~full]
        if lev < max_level:
            idx = (rest[:, None, :] * 2 + child_offsets[None, :, :]).reshape(-1, n)
        else:
            residual = rest
            s_fin = s

    index = np.concatenate(kept_idx) if kept_idx else np.zeros((0, n), dtype=np.int64)
    levels = np.concatenate(kept_lev) if kept_lev else np.zeros(0, dtype=np.int64)
    dist_cells = np.concatenate(kept_dist) if kept_dist else np.zeros(0, dtype=np.int64)
    contact = _contact_cells(residual, s_fin if len(residual) else 1, mask, off, tree)

    side = 2 ** (L - levels)
    clipped = (levels == min_level) & (dist_cells > 4 * side)
    adj_ptr, adj_idx = _adjacency(index, levels, L, n)
    fam = WhitneyFamily(
        mask=mask, window=window, n_levels=L, levels=levels, index=index,
        dist_cells=dist_cells, clipped=clipped, adj_ptr=adj_ptr, adj_idx=adj_idx,
        contact=contact, overlap=0, star_overlap=0,
    )
    object.__setattr__(fam, "overlap", _closed_overlap(fam))
    object.__setattr__(fam, "star_overlap", int(np.max(np.diff(adj_ptr))) + 1 if len(levels) else 0)
    if certify:
        certify_family(fam)
    return fam


def _touches_grid_edge(mask):
    cl = mask.closed
    for a in range(cl.ndim):
        if np.take(cl, 0, axis=a).any() or np.take(cl, -1, axis=a).any():
            return True
    return False


def _contact_cells(residual, s, mask, off, tree):
    n = mask.grid.dim
    if len(residual) == 0:
        return np.zeros((0, n), dtype=np.int64)
    sub = np.array(list(np.ndindex(*(s,) * n)), dtype=np.int64)
    cells = (residual[:, None, :] * s + sub[None, :, :]).reshape(-1, n)
    g = cells + off
    ext = np.asarray(mask.grid.shape)
    on_grid = np.all((g >= 0) & (g < ext), axis=1)
    in_s = np.zeros(len(cells), dtype=bool)
    in_s[on_grid] = mask.closed[tuple(g[on_grid].T)]
    cells = cells[~in_s]
    d, _ = tree.query(cells + 0.5, p=np.inf)
    dist = np.maximum(0.0, d - 1.0)
    far = dist > 0.5
    if far.any():
        h = mask.grid.spacing
        lo = mask.grid.lo + off * h
        bad = [tuple(float(v) for v in lo + (c + 0.5) * h) for c in cells[far]]
        raise ResolutionExhaustedError(
            f"{len(bad)} cells away from S are not covered at the finest level", bad
        )
    order = np.lexsort(cells.T[::-1])
    return cells[order]


def _adjacency(index, levels, L, n):
    """CSR lists of cubes whose 9/8-dilations intersect, computed per level pair."""
    k = len(levels)
    if k == 0:
        return np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    side = 2 ** (L - levels)
    centers = index * side[:, None] + side[:, None] / 2.0
    by_level = {int(lev): np.flatnonzero(levels == lev) for lev in np.unique(levels)}
    trees = {lev: cKDTree(centers[ids]) for lev, ids in by_level.items()}
    src, dst = [], []
    levs = sorted(by_level)
    for i, la in enumerate(levs):
        for lb in levs[i:]:
            reach = STAR * (2 ** (L - la) + 2 ** (L - lb)) / 2.0
            pairs = trees[la].query_pairs(reach + 1e-9, p=np.inf, output_type="ndarray") \
                if la == lb else trees[la].sparse_distance_matrix(
                    trees[lb], reach + 1e-9, p=np.inf, output_type="ndarray")
            if la == lb:
                a = by_level[la][pairs[:, 0]]
                b = by_level[lb][pairs[:, 1]]
            else:
                a = by_level[la][pairs["i"]]
                b = by_level[lb][pairs["j"]]
            dev = np.max(np.abs(centers[a] - centers[b]), axis=1)
            ok = dev <= reach
            src.extend([a[ok], b[ok]])
            dst.extend([b[ok], a[ok]])
    src = np.concatenate(src) if src else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    ptr = np.zeros(k + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    return np.cumsum(ptr), dst.astype(np.int64)


def _closed_overlap(fam):
    """Largest number of closed cubes sharing a point; attained at cube vertices."""
    if len(fam) == 0:
        return 0
    n = fam.dim
    side = fam.side_cells
    lo = fam.lo_cells
    corners = np.array(list(np.ndindex(*(2,) * n)), dtype=np.int64)
    best = 1
    src = np.repeat(np.arange(len(fam)), np.diff(fam.adj_ptr))
    dst = fam.adj_idx
    for c in corners:
        v = lo + c * side[:, None]
        hit = np.all((v[src] >= lo[dst]) & (v[src] <= lo[dst] + side[dst, None]), axis=1)
        counts = 1 + np.bincount(src[hit], minlength=len(fam))
        best = max(best, int(counts.max()))
    return best


def certify_family(fam):
    """Exhaustively check the Whitney properties; raise on the first failure.

    Returns a dict of measured quantities.
    """
    side = fam.side_cells
    n = fam.dim
    L = fam.n_levels
    active = ~fam.clipped
    lower = fam.dist_cells >= side
    upper = fam.dist_cells <= 4 * side
    bad = np.flatnonzero(active & ~(lower & upper))
    if bad.size:
        i = int(bad[0])
        raise CertificationError(
            f"cube {i} violates diam <= dist <= 4 diam",
            {"cube": i, "diam_cells": int(side[i]), "dist_cells": int(fam.dist_cells[i])},
        )
    # coverage by exact cell counting
    covered = int(np.sum(side.astype(np.int64) ** n))
    s_cells = int(np.count_nonzero(fam.mask.closed))
    total = 2 ** (L * n)
    if covered + s_cells + len(fam.contact) != total:
        raise CoverageError(
            "cubes, S and contact layer do not tile the window",
            {"covered": covered, "S": s_cells, "contact": len(fam.contact), "window": total},
        )
    # disjointness: no kept cube has a kept ancestor
    keysets = {lev: set(_keys(fam.index[fam.levels == lev], lev, n).tolist())
               for lev in np.unique(fam.levels).tolist()}
    for lev in keysets:
        ids = np.flatnonzero(fam.levels == lev)
        for up in keysets:
            if up >= lev:
                continue
            anc = _keys(fam.index[ids] // 2 ** (lev - up), up, n)
            clash = [i for i, k in zip(ids, anc.tolist()) if k in keysets[up]]
            if clash:
                raise CoverageError("overlapping cubes", {"cube": int(clash[0])})
    # neighbour size ratios
    src = np.repeat(np.arange(len(fam)), np.diff(fam.adj_ptr))
    dst = fam.adj_idx
    both = active[src] & active[dst]
    ratio = side[dst] / side[src]
    badpair = np.flatnonzero(both & ((ratio > 4) | (ratio < 0.25)))
    if badpair.size:
        j = int(badpair[0])
        raise CertificationError(
            "adjacent cubes differ in size by more than 4",
            {"pair": [int(src[j]), int(dst[j])], "ratio": float(ratio[j])},
        )
    return {
        "cubes": len(fam),
        "clipped": int(fam.clipped.sum()),
        "certified": int(active.sum()),
        "contact_cells": len(fam.contact),
        "overlap_N": fam.overlap,
        "star_overlap_N": fam.star_overlap,
        "max_neighbor_ratio": float(ratio[both].max()) if both.any() else 1.0,
        "levels": [int(fam.levels.min()), int(fam.levels.max())] if len(fam) else [],
    }


def locate(family, x):
    """Indices of all cubes ``Q`` with ``x`` in ``Q*``."""
    x = check_points(x, family.dim)
    if len(x) != 1:
        raise ValueError("locate takes a single point")
    if family.in_set(x)[0]:
        raise InSetError(f"point {tuple(x[0])} lies in S")
    rows, cubes = family.star_candidates(x)
    return set(int(c) for c in cubes)
