"""Measure-density (Ahlfors) and local quasiconvexity estimators for masks."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ._validation import check_positive, check_rng
from .errors import ConnectivityError, DegenerateCubeError
from .grid import Cube, box_sums, neighbour_offsets, summed_volume_table


@dataclass(frozen=True)
class AhlforsReport:
    C_A: float
    delta_A: float
    samples: list = field(default_factory=list)

    def curve(self):
        """``C_A`` restricted to each sampled diameter, keyed by diameter."""
        out = {}
        for cube, ratio in self.samples:
            out[cube.diam] = max(out.get(cube.diam, 1.0), ratio)
        running, curve = 1.0, {}
        for d in sorted(out):
            running = max(running, out[d])
            curve[d] = running
        return curve


@dataclass(frozen=True)
class QuasiconvexityReport:
    C_q: float
    R: float
    witness_pairs: list = field(default_factory=list)


def measure_density(mask, delta, sample_count, seed=0, which="closed"):
    """Estimate the measure-density constant ``C_A`` of a mask at scales up to ``delta``.

    Cube centres are drawn from the mask cells; for every dyadic radius
    ``r = h 2^j <= delta/2`` the ratio ``|Q| / |Q n A|`` is computed by counting
    cells whose centres lie in ``Q(x, r)``.
    """
    grid = mask.grid
    h = grid.spacing
    delta = check_positive(delta, "delta")
    if delta < 2 * h - 1e-12:
        raise ValueError("delta must be at least two cells")
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    cells = mask.closed if which == "closed" else mask.open
    candidates = np.flatnonzero(cells)
    if candidates.size == 0:
        raise DegenerateCubeError("mask has no cells to centre cubes on")
    rng = check_rng(seed)
    take = min(sample_count, candidates.size)
    picks = np.sort(rng.choice(candidates, size=take, replace=False))
    idx = np.asarray(np.unravel_index(picks, grid.shape)).T
    sat = summed_volume_table(cells)

    samples = []
    c_a = 1.0
    j = 0
    while h * 2 ** j <= delta / 2 + 1e-12:
        k = 2 ** j
        inside = box_sums(sat, idx - k, idx + k + 1)
        if np.any(inside == 0):
            raise DegenerateCubeError("cube centred in the mask misses the mask")
        ratios = (2 * k + 1) ** grid.dim / inside
        centers = grid.lo + (idx + 0.5) * h
        for c, ratio in zip(centers, ratios):
            samples.append((Cube(c, k * h), float(ratio)))
        c_a = max(c_a, float(ratios.max()))
        j += 1
    return AhlforsReport(c_a, delta, samples)


def cell_graph(mask):
    """Sparse adjacency of open cells in the full 3^n neighbourhood."""
    grid = mask.grid
    flat = np.full(grid.shape, -1, dtype=np.int64)
    flat[mask.open] = np.arange(np.count_nonzero(mask.open))
    cells = np.argwhere(mask.open)
    rows, cols, wts = [], [], []
    ext = np.asarray(grid.shape)
    for off in neighbour_offsets(grid.dim):
        nb = cells + off
        ok = np.all((nb >= 0) & (nb < ext), axis=1)
        target = np.full(len(cells), -1, dtype=np.int64)
        target[ok] = flat[tuple(nb[ok].T)]
        keep = target >= 0
        rows.append(np.flatnonzero(keep))
        cols.append(target[keep])
        wts.append(np.full(keep.sum(), grid.spacing * math.sqrt(float(off @ off))))
    n = len(cells)
    graph = sparse.csr_matrix(
        (np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return graph, cells


def _geodesics(graph, sources, chunk=32):
    out = {}
    sources = np.unique(sources)
    for start in range(0, len(sources), chunk):
        block = sources[start:start + chunk]
        dist = csgraph.dijkstra(graph, directed=False, indices=block)
        for s, row in zip(block, dist):
            out[int(s)] = row
    return out


def quasiconvexity(mask, R, pair_count, seed=0, assume_connected=False):
    """Largest ratio of grid-geodesic to straight distance over random close pairs."""
    grid = mask.grid
    R = check_positive(R, "R")
    if R <= 2 * grid.spacing:
        raise ValueError("R must exceed two cells")
    graph, cells = cell_graph(mask)
    if len(cells) == 0:
        raise ConnectivityError("mask has no open cells")
    ncomp, labels = csgraph.connected_components(graph, directed=False)
    rng = check_rng(seed)
    if ncomp > 1 and not assume_connected:
        big = np.argmax(np.bincount(labels))
        pool = np.flatnonzero(labels == big)
    else:
        pool = np.arange(len(cells))
    centers = grid.lo + (cells + 0.5) * grid.spacing

    pairs = []
    for _ in range(pair_count):
        a = int(rng.choice(pool))
        d = np.linalg.norm(centers[pool] - centers[a], axis=1)
        near = pool[d < R]
        pairs.append((a, int(rng.choice(near))))
    geo = _geodesics(graph, np.array([a for a, _ in pairs]))
    witnesses = []
    c_q = 1.0
    for a, b in pairs:
        straight = float(np.linalg.norm(centers[a] - centers[b]))
        length = float(geo[a][b])
        if math.isinf(length):
            raise ConnectivityError(
                f"cells {tuple(cells[a])} and {tuple(cells[b])} are not connected"
            )
        ratio = 1.0 if straight == 0 else length / straight
        c_q = max(c_q, ratio)
        witnesses.append((tuple(centers[a]), tuple(centers[b]), length, straight))
    return QuasiconvexityReport(c_q, R, witnesses)


def geodesic_ratio(mask, x, y):
    """Grid-geodesic over straight distance between the open cells holding ``x`` and ``y``."""
    graph, cells = cell_graph(mask)
    grid = mask.grid
    lookup = {tuple(c): i for i, c in enumerate(cells)}
    idx, inside = grid.cell_of(np.array([x, y], dtype=float))
    if not inside.all():
        raise ValueError("points must lie inside the grid")
    try:
        a, b = lookup[tuple(idx[0])], lookup[tuple(idx[1])]
    except KeyError as exc:
        raise ValueError("both points must lie in open cells") from exc
    length = float(csgraph.dijkstra(graph, directed=False, indices=a)[b])
    if math.isinf(length):
        raise ConnectivityError("points lie in different components")
    ca, cb = grid.lo + (idx + 0.5) * grid.spacing
    straight = float(np.linalg.norm(ca - cb))
    return 1.0 if straight == 0 else length / straight
