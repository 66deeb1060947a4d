"""Constructive-geometry shape descriptions.

A shape is a tree of primitives combined with union, intersection and
difference. It is read from a JSON document such as::

    {"op": "difference",
     "args": [{"prim": "ball", "c": [0, 0], "r": 1},
              {"prim": "box", "lo": [0, -1e-9], "hi": [1, 1e-9]}]}

Every node answers point membership for either its open interior or its
closure. Complementation swaps the two, so ``difference(A, B)`` asks for the
open part of ``A`` minus the closed part of ``B``; this is what removes a
zero-width slit from a disk.
"""

import json
from pathlib import Path

import numpy as np


class Shape:
    dim = None
    # sets with empty interior are rasterised by their closed cells
    degenerate = False
    # grid offset, in cells, that rasterisers should use (0.5 puts cell centres on integers)
    cell_shift = 0.0

    def contains(self, points, closed=False, tol=0.0):
        """Boolean membership of ``points`` (m, dim).

        ``tol`` dilates the set by that much in the uniform norm and is only
        meaningful together with ``closed=True``.
        """
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError


class Box(Shape):
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise ValueError("box needs lo <= hi of equal length")
        self.dim = self.lo.size

    def contains(self, points, closed=False, tol=0.0):
        x = np.asarray(points, dtype=float)
        if closed:
            return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=1)
        return np.all((x > self.lo) & (x < self.hi), axis=1)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def to_dict(self):
        return {"prim": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Ball(Shape):
    def __init__(self, c, r):
        self.c = np.asarray(c, dtype=float)
        self.r = float(r)
        if self.r < 0:
            raise ValueError("ball radius must be nonnegative")
        self.dim = self.c.size

    def contains(self, points, closed=False, tol=0.0):
        d = np.linalg.norm(np.asarray(points, dtype=float) - self.c, axis=1)
        if closed:
            # uniform-norm dilation by tol is contained in the euclidean one by tol*sqrt(n)
            return d <= self.r + tol * np.sqrt(self.dim)
        return d < self.r

    def bounding_box(self):
        return self.c - self.r, self.c + self.r

    def to_dict(self):
        return {"prim": "ball", "c": self.c.tolist(), "r": self.r}


class HalfSpace(Shape):
    """``{x : normal . x < offset}``; unbounded, so clip it with a box."""

    def __init__(self, normal, offset):
        self.normal = np.asarray(normal, dtype=float)
        self.offset = float(offset)
        self.dim = self.normal.size

    def contains(self, points, closed=False, tol=0.0):
        s = np.asarray(points, dtype=float) @ self.normal
        if closed:
            return s <= self.offset + tol * np.abs(self.normal).sum()
        return s < self.offset

    def bounding_box(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    def to_dict(self):
        return {"prim": "halfspace", "normal": self.normal.tolist(), "offset": self.offset}


class Polygon(Shape):
    """Simple polygon in the plane, membership by crossing number."""

    dim = 2

    def __init__(self, vertices):
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2 or len(self.vertices) < 3:
            raise ValueError("polygon needs at least three 2-D vertices")

    def contains(self, points, closed=False, tol=0.0):
        if tol:
            raise ValueError("polygon membership does not support dilation")
        x = np.asarray(points, dtype=float)
        px, py = x[:, 0:1], x[:, 1:2]
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (py - ay) * (bx - ax) / (by - ay)
        inside = np.count_nonzero(straddle & (px < xcross), axis=1) % 2 == 1
        return inside

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def to_dict(self):
        return {"prim": "polygon", "vertices": self.vertices.tolist()}


class Segment(Shape):
    """Closed segment; it has empty interior."""

    degenerate = True

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = self.a.size

    def contains(self, points, closed=False, tol=0.0):
        x = np.asarray(points, dtype=float)
        if not closed:
            return np.zeros(len(x), dtype=bool)
        d = self.b - self.a
        denom = float(d @ d)
        t = np.zeros(len(x)) if denom == 0 else np.clip((x - self.a) @ d / denom, 0.0, 1.0)
        nearest = self.a + t[:, None] * d
        return np.linalg.norm(x - nearest, axis=1) <= tol * np.sqrt(self.dim) + 1e-12

    def bounding_box(self):
        return np.minimum(self.a, self.b), np.maximum(self.a, self.b)

    def to_dict(self):
        return {"prim": "segment", "a": self.a.tolist(), "b": self.b.tolist()}


class Point(Shape):
    degenerate = True

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.dim = self.c.size

    def contains(self, points, closed=False, tol=0.0):
        x = np.asarray(points, dtype=float)
        if not closed:
            return np.zeros(len(x), dtype=bool)
        return np.max(np.abs(x - self.c), axis=1) <= tol

    def bounding_box(self):
        return self.c.copy(), self.c.copy()

    def to_dict(self):
        return {"prim": "point", "c": self.c.tolist()}


class Union(Shape):
    def __init__(self, *args):
        _check_children(args)
        self.args = args
        self.dim = args[0].dim

    def contains(self, points, closed=False, tol=0.0):
        out = self.args[0].contains(points, closed, tol)
        for a in self.args[1:]:
            out |= a.contains(points, closed, tol)
        return out

    def bounding_box(self):
        boxes = [a.bounding_box() for a in self.args]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def to_dict(self):
        return {"op": "union", "args": [a.to_dict() for a in self.args]}


class Intersection(Shape):
    def __init__(self, *args):
        _check_children(args)
        self.args = args
        self.dim = args[0].dim

    def contains(self, points, closed=False, tol=0.0):
        out = self.args[0].contains(points, closed, tol)
        for a in self.args[1:]:
            out &= a.contains(points, closed, tol)
        return out

    def bounding_box(self):
        boxes = [a.bounding_box() for a in self.args]
        return np.max([b[0] for b in boxes], axis=0), np.min([b[1] for b in boxes], axis=0)

    def to_dict(self):
        return {"op": "intersection", "args": [a.to_dict() for a in self.args]}


class Difference(Shape):
    def __init__(self, first, *rest):
        _check_children((first,) + rest)
        self.first = first
        self.rest = rest
        self.dim = first.dim

    def contains(self, points, closed=False, tol=0.0):
        out = self.first.contains(points, closed, tol)
        for a in self.rest:
            out &= ~a.contains(points, not closed, 0.0 if closed else tol)
        return out

    def bounding_box(self):
        return self.first.bounding_box()

    def to_dict(self):
        return {"op": "difference", "args": [self.first.to_dict()] + [a.to_dict() for a in self.rest]}


def _check_children(args):
    if not args:
        raise ValueError("set operation needs at least one argument")
    dims = {a.dim for a in args}
    if len(dims) != 1:
        raise ValueError(f"mixed dimensions in set operation: {sorted(dims)}")


_PRIMS = {
    "box": lambda d: Box(d["lo"], d["hi"]),
    "ball": lambda d: Ball(d["c"], d["r"]),
    "halfspace": lambda d: HalfSpace(d["normal"], d["offset"]),
    "half-plane": lambda d: HalfSpace(d["normal"], d["offset"]),
    "polygon": lambda d: Polygon(d["vertices"]),
    "segment": lambda d: Segment(d["a"], d["b"]),
    "point": lambda d: Point(d["c"]),
}
_OPS = {"union": Union, "intersection": Intersection, "difference": Difference}


def shape_from_dict(doc):
    shape = _shape_from_dict(doc)
    if "cell_shift" in doc:
        shape.cell_shift = float(doc["cell_shift"])
    return shape


def _shape_from_dict(doc):
    if "prim" in doc:
        try:
            return _PRIMS[doc["prim"]](doc)
        except KeyError as exc:
            raise ValueError(f"bad primitive description {doc!r}") from exc
    if "op" in doc:
        if doc["op"] not in _OPS:
            raise ValueError(f"unknown set operation {doc['op']!r}")
        return _OPS[doc["op"]](*[shape_from_dict(a) for a in doc.get("args", [])])
    raise ValueError(f"shape node needs 'prim' or 'op': {doc!r}")


def load_shape(source):
    """Parse a shape from a dict, a JSON string or a path to a JSON file."""
    if isinstance(source, Shape):
        return source
    if isinstance(source, dict):
        return shape_from_dict(source)
    text = str(source)
    if text in NAMED_SHAPES:
        return NAMED_SHAPES[text]()
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text(encoding="utf-8")
    return shape_from_dict(json.loads(text))


def slit_square(slit_halfwidth=1e-9):
    """``(-1, 1)^2`` minus the segment ``[0, 1) x {0}``."""
    return Difference(
        Box([-1.0, -1.0], [1.0, 1.0]),
        Box([0.0, -slit_halfwidth], [1.0, slit_halfwidth]),
    )


def slit_disk(slit_halfwidth=1e-9):
    return Difference(
        Ball([0.0, 0.0], 1.0),
        Box([0.0, -slit_halfwidth], [1.0, slit_halfwidth]),
    )


def _shifted(shape):
    shape.cell_shift = 0.5
    return shape


NAMED_SHAPES = {
    "unit_square": lambda: Box([0.0, 0.0], [1.0, 1.0]),
    "unit_disk": lambda: Ball([0.0, 0.0], 1.0),
    "interval": lambda: Box([0.0], [1.0]),
    "point": lambda: Point([0.0, 0.0]),
    "segment": lambda: Segment([-0.5, 0.0], [0.5, 0.0]),
    "slit_square": lambda: _shifted(slit_square()),
    "slit_disk": lambda: _shifted(slit_disk()),
}
