"""Quasi-cubes: pieces of ``S`` of measure comparable to each Whitney cube.

For a cube ``K`` let ``a_K`` be the closed-cell centre nearest to its centre
(uniform norm, ties broken lexicographically) and ``K_eps = Q(a_K, eps r_K)``.
The quasi-cube of ``Q`` is ``(Q_eps n S)`` minus the reflected cubes ``K_eps``
of all smaller cubes (``r_K <= eps r_Q``) whose reflections meet ``Q_eps``.
Membership is by cell centre throughout.
"""

from dataclasses import dataclass, field
import json
import string

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_epsilon
from .errors import CertificationError, RegularityViolationError
from .whitney import boundary_cells

_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class QuasiCubeFamily:
    family: object
    epsilon: float
    delta_S: float
    nearest_point: np.ndarray     # (k, n) coordinates of a_K
    nearest_cell: np.ndarray      # (k, n) mask-grid index of a_K
    member_ptr: np.ndarray
    member_idx: np.ndarray        # flat mask-grid cell indices, sorted per cube
    floor: np.ndarray             # cubes below the resolution floor
    gamma1: float
    gamma2: int
    violations: tuple = field(default=())

    @property
    def reflected_half_sides(self):
        return self.epsilon * self.family.half_sides

    def reflected(self, i):
        from .grid import Cube

        return Cube(self.nearest_point[i], self.reflected_half_sides[i])

    def members(self, i):
        return self.member_idx[self.member_ptr[i]:self.member_ptr[i + 1]]

    @property
    def sizes(self):
        return np.diff(self.member_ptr)

    def to_records(self):
        fam = self.family
        h, n = fam.spacing, fam.dim
        vol = (2 * fam.half_sides) ** n
        for i in range(len(fam)):
            cnt = int(self.sizes[i])
            yield {
                "cube_id": i,
                "a_K": [float(v) for v in self.nearest_point[i]],
                "epsilon": self.epsilon,
                "member_count": cnt,
                "ratio": float(vol[i] / (cnt * h ** n)) if cnt else None,
            }

    def dump_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def nearest_set_cells(family):
    """Mask-grid index of the closed cell nearest each cube centre (uniform norm)."""
    grid = family.mask.grid
    h = grid.spacing
    cells = boundary_cells(family.mask)
    tree = cKDTree(cells + 0.5)
    x = (family.centers - grid.lo) / h
    d, _ = tree.query(x, p=np.inf)
    near = tree.query_ball_point(x, d + _TOL, p=np.inf)
    out = np.empty((len(x), grid.dim), dtype=np.int64)
    for i, cand in enumerate(near):
        c = cells[np.asarray(cand)]
        out[i] = c[np.lexsort(c.T[::-1])[0]]
    return out


def _box_union(masks):
    """``covered[i0, i1, ...] = any_K prod_a masks[a][K, i_a]``."""
    n = len(masks)
    letters = string.ascii_lowercase[:n]
    spec = ",".join("z" + c for c in letters) + "->" + letters
    return np.einsum(spec, *[m.astype(np.int64) for m in masks]) > 0


def build_quasicubes(family, mask=None, epsilon=0.5, delta_S=np.inf, strict=True,
                     cells="closed"):
    """Materialise ``H_Q`` for every cube of ``family``.

    ``cells`` selects which mask cells may belong to a quasi-cube: ``"closed"``
    (all of ``S``) or ``"open"`` (interior cells only, a diagnostic that
    exposes thin parts of ``S``). With ``strict`` an empty ``H_Q`` in the
    checked diameter range raises :class:`RegularityViolationError`;
    otherwise the offending cubes are recorded in ``violations``.
    """
    eps = check_epsilon(epsilon)
    mask = family.mask if mask is None else mask
    if mask is not family.mask and mask.digest() != family.mask.digest():
        raise ValueError("mask differs from the one the family was built on")
    if cells not in ("closed", "open"):
        raise ValueError("cells must be 'closed' or 'open'")
    allowed = mask.closed if cells == "closed" else mask.open
    grid = mask.grid
    h, n = grid.spacing, grid.dim
    ext = np.asarray(grid.shape)
    k = len(family)

    acell = nearest_set_cells(family) if k else np.zeros((0, n), dtype=np.int64)
    apoint = grid.lo + (acell + 0.5) * h
    # a_K is a closed-cell centre within 9 r_K of x_K, so Q(a_K, r_K) lies in 10K
    r_cells = family.side_cells / 2.0
    sep = np.max(np.abs((apoint - family.centers) / h), axis=1) if k else np.zeros(0)
    bad = np.flatnonzero(~family.clipped & (sep > 9 * r_cells + _TOL))
    if bad.size:
        i = int(bad[0])
        raise CertificationError("Q(a_K, r_K) is not inside 10K", {"cube": i})

    er = eps * r_cells  # reflected half-sides, in cells
    diam = family.diams
    small = diam <= delta_S * (1 + 1e-12)
    floor = small & (diam < 4 * h / eps * (1 - 1e-12))
    tree = cKDTree(acell) if k else None

    ptr = np.zeros(k + 1, dtype=np.int64)
    chunks = []
    violations = []
    order = np.arange(k)
    for i in order:
        if not small[i]:
            ptr[i + 1] = ptr[i]
            continue
        a = acell[i]
        lo = np.maximum(np.ceil(a - er[i] - _TOL).astype(np.int64), 0)
        hi = np.minimum(np.floor(a + er[i] + _TOL).astype(np.int64), ext - 1)
        if np.any(hi < lo):
            members = np.zeros(0, dtype=np.int64)
        else:
            box = allowed[tuple(slice(l, u + 1) for l, u in zip(lo, hi))].copy()
            if not floor[i]:
                cand = tree.query_ball_point(a, er[i] * (1 + eps) + _TOL, p=np.inf)
                cand = np.asarray(cand, dtype=np.int64)
                cand = cand[(cand != i) & (r_cells[cand] <= eps * r_cells[i] + _TOL)]
                if cand.size:
                    gap = np.max(np.abs(acell[cand] - a), axis=1)
                    cand = cand[gap <= er[cand] + er[i] + _TOL]
                if cand.size:
                    axes = []
                    for ax in range(n):
                        coord = np.arange(lo[ax], hi[ax] + 1)
                        axes.append(
                            np.abs(coord[None, :] - acell[cand, ax][:, None])
                            <= er[cand][:, None] + _TOL
                        )
                    box &= ~_box_union(axes)
            local = np.argwhere(box) + lo
            members = np.ravel_multi_index(tuple(local.T), grid.shape) if len(local) else \
                np.zeros(0, dtype=np.int64)
        if len(members) == 0 and not floor[i]:
            violations.append(int(i))
        chunks.append(np.sort(members))
        ptr[i + 1] = ptr[i] + len(members)
    idx = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)

    if violations and strict:
        raise RegularityViolationError(
            f"{len(violations)} quasi-cubes are empty at diameters up to delta_S",
            violations,
        )
    sizes = np.diff(ptr)
    checked = small & ~floor & (sizes > 0)
    vol = (2 * r_cells) ** n
    gamma1 = float(np.max(vol[checked] / sizes[checked])) if checked.any() else 0.0
    counts = np.bincount(idx, minlength=grid.n_cells)
    gamma2 = int(counts.max()) if counts.size else 0
    return QuasiCubeFamily(
        family=family, epsilon=eps, delta_S=float(delta_S), nearest_point=apoint,
        nearest_cell=acell, member_ptr=ptr, member_idx=idx, floor=floor,
        gamma1=gamma1, gamma2=gamma2, violations=tuple(violations),
    )


def overlap_histogram(qfam, region=None):
    """``{k: number of S cells lying in exactly k quasi-cubes}``.

    ``region`` (boolean array on the mask grid) restricts the cells counted.
    """
    grid = qfam.family.mask.grid
    counts = np.bincount(qfam.member_idx, minlength=grid.n_cells)
    keep = qfam.family.mask.closed.ravel()
    if region is not None:
        keep = keep & np.asarray(region, dtype=bool).ravel()
    counts = counts[keep]
    vals, freq = np.unique(counts, return_counts=True)
    return {int(v): int(f) for v, f in zip(vals, freq)}


def certify_quasicubes(qfam):
    """Check containment in ``10Q n S``, disjointness from removed reflections and the empty branch."""
    fam = qfam.family
    grid = fam.mask.grid
    h = grid.spacing
    closed = fam.mask.closed.ravel()
    eps = qfam.epsilon
    r = fam.half_sides
    centers = grid.centers()
    for i in range(len(fam)):
        mem = qfam.members(i)
        if fam.diams[i] > qfam.delta_S * (1 + 1e-12):
            if mem.size:
                raise CertificationError("H_Q nonempty above delta_S", {"cube": i})
            continue
        if mem.size == 0:
            continue
        if not closed[mem].all():
            raise CertificationError("H_Q leaves S", {"cube": i})
        dev = np.max(np.abs(centers[mem] - fam.centers[i]), axis=1)
        if np.any(dev > 10 * r[i] + _TOL * h):
            raise CertificationError("H_Q leaves 10Q", {"cube": i})
    checked = (fam.diams <= qfam.delta_S) & ~qfam.floor & (qfam.sizes > 0)
    vol = (2 * r / h) ** fam.dim
    ratios = vol[checked] / qfam.sizes[checked]
    return {
        "gamma1": qfam.gamma1,
        "gamma2": qfam.gamma2,
        "checked_cubes": int(checked.sum()),
        "floor_cubes": int(qfam.floor.sum()),
        "empty_cubes": len(qfam.violations),
        "max_ratio": float(ratios.max()) if ratios.size else 0.0,
        "epsilon": eps,
    }


def reflection_disjointness(qfam, i):
    """Member cells of ``H_Q`` lying in some removed ``K_eps`` (should be none)."""
    fam = qfam.family
    eps = qfam.epsilon
    rc = fam.side_cells / 2.0
    grid = fam.mask.grid
    mem = np.array(np.unravel_index(qfam.members(i), grid.shape)).T
    if len(mem) == 0:
        return 0
    a = qfam.nearest_cell
    bad = 0
    for k in range(len(fam)):
        if k == i or rc[k] > eps * rc[i] + _TOL:
            continue
        if np.max(np.abs(a[k] - a[i])) > eps * (rc[k] + rc[i]) + _TOL:
            continue
        bad += int(np.sum(np.max(np.abs(mem - a[k]), axis=1) <= eps * rc[k] + _TOL))
    return bad
