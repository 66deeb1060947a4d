"""Smooth partition of unity subordinate to a Whitney family.

Each cube gets a tensor-product plateau bump equal to 1 on ``Q`` and vanishing
outside ``Q* = (9/8) Q``; normalising by the sum of all bumps gives ``phi_Q``.
The transition uses the quintic smoothstep, so the bumps are C^2.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_points, check_rng
from .errors import CoverageError, InSetError
from .whitney import STAR

_BAND = 1.0 / (STAR - 1.0)  # 8: inverse width of the transition band
# offsets of a 17^n local lattice spanning two steps each way
_ZOOM = {n: np.stack([g.ravel() for g in np.meshgrid(*([np.linspace(-2, 2, 17)] * n), indexing="ij")],
                     axis=1) for n in (1, 2, 3)}


def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep5_deriv(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (t - 1.0) ** 2, 0.0)


def plateau(tau):
    """1 on [-1, 1], 0 outside [-9/8, 9/8], C^2 in between."""
    a = np.abs(tau)
    return 1.0 - smoothstep5((a - 1.0) * _BAND)


def plateau_deriv(tau):
    a = np.abs(tau)
    return -np.sign(tau) * _BAND * smoothstep5_deriv((a - 1.0) * _BAND)


def bump_and_grad(x, center, radius):
    """Tensor bump ``prod_i rho((x_i - c_i)/r)`` and its gradient, row-wise."""
    tau = (x - center) / radius[:, None]
    rho = plateau(tau)
    drho = plateau_deriv(tau) / radius[:, None]
    val = np.prod(rho, axis=1)
    # products of the other factors from prefix and suffix products
    ones = np.ones((len(x), 1))
    pre = np.cumprod(np.hstack([ones, rho[:, :-1]]), axis=1)
    suf = np.cumprod(np.hstack([ones, rho[:, :0:-1]]), axis=1)[:, ::-1]
    return val, drho * pre * suf


@dataclass(frozen=True, eq=False)
class BumpBasis:
    family: object
    profile: str = "quintic-plateau"

    def _pairs(self, points):
        x = check_points(points, self.family.dim)
        rows, cubes = self.family.star_candidates(x)
        fam = self.family
        psi, dpsi = bump_and_grad(x[rows], fam.centers[cubes], fam.half_sides[cubes])
        keep = psi > 0
        return x, rows[keep], cubes[keep], psi[keep], dpsi[keep]

    def values(self, points):
        """Nonzero ``phi_Q(x)`` as ``(rows, cubes, values)``."""
        x, rows, cubes, psi, _ = self._pairs(points)
        denom = np.bincount(rows, weights=psi, minlength=len(x))
        return rows, cubes, psi / denom[rows]

    def gradients(self, points):
        """``(rows, cubes, values, grads)`` of the nonzero ``phi_Q`` at ``points``."""
        x, rows, cubes, psi, dpsi = self._pairs(points)
        m, n = len(x), x.shape[1]
        denom = np.bincount(rows, weights=psi, minlength=m)
        ddenom = np.stack(
            [np.bincount(rows, weights=dpsi[:, i], minlength=m) for i in range(n)], axis=1
        )
        d = denom[rows]
        grad = dpsi / d[:, None] - (psi / d ** 2)[:, None] * ddenom[rows]
        return rows, cubes, psi / d, grad

    def partition_sum(self, points):
        x = check_points(points, self.family.dim)
        rows, _, vals = self.values(x)
        return np.bincount(rows, weights=vals, minlength=len(x))

    def gradient_constant(self, lattice=None):
        """Measured ``max |grad phi_Q| diam Q`` over the union of the cubes.

        ``phi_Q`` on ``Q*`` only depends on ``Q`` and its star neighbours, so
        cubes are grouped by their rescaled neighbourhood. Each distinct
        neighbourhood is sampled on a cube-relative lattice and the best
        lattice points are then refined by zooming in.
        """
        cached = self.__dict__.get("_gradc")
        if cached is not None and lattice is None:
            return cached
        fam = self.family
        n = fam.dim
        m = lattice or {1: 2049, 2: 257}.get(n, 49)
        t = np.linspace(-STAR, STAR, m)
        mesh = np.stack([g.ravel() for g in np.meshgrid(*([t] * n), indexing="ij")], axis=1)
        best = 0.0
        for sig in neighbourhood_signatures(fam):
            rel = np.array([s[:n] for s in sig]).reshape(-1, n)
            rad = np.array([s[n] for s in sig])
            centers = np.vstack([np.zeros(n), rel])
            radii = np.concatenate([[1.0], rad])
            g = _own_gradient_norm(mesh, centers, radii)
            # zoom in on the three best lattice points with shrinking local lattices
            top = np.argsort(g)[-3:]
            z, g_k, step = mesh[top], g[top], t[1] - t[0]
            k = len(_ZOOM[n])
            for _ in range(4):
                local = (z[:, None, :] + step * _ZOOM[n]).reshape(-1, n)
                gl = _own_gradient_norm(local, centers, radii).reshape(len(z), k)
                j = np.argmax(gl, axis=1)
                up = gl[np.arange(len(z)), j] > g_k
                z[up] = local.reshape(len(z), k, n)[up, j[up]]
                g_k = np.maximum(g_k, gl[np.arange(len(z)), j])
                step /= 8
            # lattice is in units of r_Q; diam Q = 2 r_Q
            best = max(best, 2.0 * float(g_k.max()))
        if lattice is None:
            object.__setattr__(self, "_gradc", best)
        return best

    @property
    def derivative_bound_constant(self):
        return self.gradient_constant()


def _own_gradient_norm(x, centers, radii):
    """``|grad (psi_0 / sum psi)|`` at ``x``; zero where no cube covers ``x`` (sum < 1)."""
    n = x.shape[1]
    psi_sum = np.zeros(len(x))
    dsum = np.zeros((len(x), n))
    own = own_grad = None
    for j, (c, r) in enumerate(zip(centers, radii)):
        near = np.max(np.abs(x - c), axis=1) < STAR * r
        v = np.zeros(len(x))
        g = np.zeros((len(x), n))
        if near.any():
            v[near], g[near] = bump_and_grad(x[near], c, np.full(near.sum(), r))
        psi_sum += v
        dsum += g
        if j == 0:
            own, own_grad = v, g
    out = np.zeros(len(x))
    # the ratio is homogeneous of degree 0 where all bumps vanish together, so
    # only covered points carry a bounded gradient; those are the only ones used
    ok = psi_sum >= 1.0 - 1e-12
    grad = own_grad[ok] / psi_sum[ok, None] - (own[ok] / psi_sum[ok] ** 2)[:, None] * dsum[ok]
    out[ok] = np.linalg.norm(grad, axis=1)
    return out


def neighbourhood_signatures(fam):
    """Distinct star neighbourhoods, rescaled so the cube is ``Q(0, 1)``."""
    centers = fam.centers
    radii = fam.half_sides
    seen = set()
    for i in range(len(fam)):
        nb = fam.neighbors(i)
        rel = (centers[nb] - centers[i]) / radii[i]
        rr = radii[nb] / radii[i]
        sig = tuple(sorted(tuple(np.append(a, b).tolist()) for a, b in zip(rel, rr)))
        seen.add(sig)
    return sorted(seen)


def build_partition(family):
    """Partition of unity over ``family``; probes cube centres and vertices for coverage."""
    basis = BumpBasis(family)
    if len(family) == 0:
        return basis
    n = family.dim
    corners = np.array(list(np.ndindex(*(2,) * n)), dtype=float) * 2 - 1
    probes = [family.centers]
    for c in corners:
        probes.append(family.centers + c * family.half_sides[:, None])
    probes = np.vstack(probes)
    x, rows, _, psi, _ = basis._pairs(probes)
    denom = np.bincount(rows, weights=psi, minlength=len(x))
    low = np.flatnonzero(denom < 1 - 1e-12)
    if low.size:
        raise CoverageError(
            "bump sum below 1 on a Whitney cube", {"point": x[low[0]].tolist()}
        )
    return basis


def evaluate_partition(basis, x):
    """``{cube index: phi_Q(x)}`` for the cubes whose bump is nonzero at ``x``."""
    x = check_points(x, basis.family.dim)
    if len(x) != 1:
        raise ValueError("evaluate_partition takes a single point")
    if basis.family.in_set(x)[0]:
        raise InSetError(f"point {tuple(x[0])} lies in S")
    _, cubes, vals = basis.values(x)
    return {int(c): float(v) for c, v in zip(cubes, vals)}


def distance_to_set(family, points):
    """Uniform-norm distance from points to the closed cells of ``S``."""
    from scipy.spatial import cKDTree

    from .whitney import boundary_cells

    grid = family.mask.grid
    x = check_points(points, family.dim)
    tree = family.__dict__.get("_btree")
    if tree is None:
        tree = cKDTree(grid.lo + (boundary_cells(family.mask) + 0.5) * grid.spacing)
        object.__setattr__(family, "_btree", tree)
    d, _ = tree.query(x, p=np.inf)
    d = np.maximum(0.0, d - grid.spacing / 2)
    d[family.in_set(x)] = 0.0
    return d


def certify_partition(basis, probes=10_000, seed=0):
    """Check properties (a)-(c) at random window points at least ``h`` away from ``S``."""
    fam = basis.family
    rng = check_rng(seed)
    lo, hi = fam.window.lo, fam.window.hi
    pts = []
    need = probes
    while need > 0:
        cand = rng.uniform(lo, hi, size=(2 * need + 16, fam.dim))
        cand = cand[distance_to_set(fam, cand) > fam.spacing]
        pts.append(cand[:need])
        need -= len(cand[:need])
    pts = np.vstack(pts)
    rows, cubes, vals = basis.values(pts)
    sums = np.bincount(rows, weights=vals, minlength=len(pts))
    support = np.bincount(rows, minlength=len(pts))
    return {
        "probes": len(pts),
        "max_sum_error": float(np.max(np.abs(sums - 1.0))),
        "min_value": float(vals.min()) if vals.size else 0.0,
        "max_value": float(vals.max()) if vals.size else 0.0,
        "max_support": int(support.max()),
        "star_overlap_N": fam.star_overlap,
    }
