"""Named families of test functions with closed-form gradients."""

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # keep pytest from collecting this class

    name: str
    f: Callable
    grad: Callable
    smooth: bool = True

    def __call__(self, *points):
        return self.f(*(np.atleast_2d(np.asarray(p, dtype=float)) for p in points))

    def gradient(self, *points):
        return self.grad(*(np.atleast_2d(np.asarray(p, dtype=float)) for p in points))


def _quintic(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


def _quintic_d(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30 * t * t * (1 - t) ** 2, 0.0)


def _bump(x, c, s):
    """``exp(-|x - c|^2 / s^2)`` and its gradient."""
    d = x - c
    v = np.exp(-np.sum(d * d, axis=1) / s ** 2)
    return v, (-2 / s ** 2) * d * v[:, None]


def _suite_2d():
    pi = np.pi
    X = lambda p: p[:, 0]
    Y = lambda p: p[:, 1]
    st = lambda *cols: np.stack(cols, axis=1)
    c0 = np.array([0.3, 0.6])
    return [
        TestFunction("const", lambda p: np.ones(len(p)), lambda p: np.zeros_like(p)),
        TestFunction("x", X, lambda p: st(np.ones(len(p)), np.zeros(len(p)))),
        TestFunction("x+2y", lambda p: X(p) + 2 * Y(p),
                     lambda p: st(np.ones(len(p)), 2 * np.ones(len(p)))),
        TestFunction("x2-y2", lambda p: X(p) ** 2 - Y(p) ** 2, lambda p: st(2 * X(p), -2 * Y(p))),
        TestFunction("xy", lambda p: X(p) * Y(p), lambda p: st(Y(p), X(p))),
        TestFunction("cubic", lambda p: X(p) ** 3 - 3 * X(p) * Y(p) ** 2,
                     lambda p: st(3 * X(p) ** 2 - 3 * Y(p) ** 2, -6 * X(p) * Y(p))),
        TestFunction("sinx_cosy", lambda p: np.sin(pi * X(p)) * np.cos(pi * Y(p)),
                     lambda p: st(pi * np.cos(pi * X(p)) * np.cos(pi * Y(p)),
                                  -pi * np.sin(pi * X(p)) * np.sin(pi * Y(p)))),
        TestFunction("sin2pix_y", lambda p: np.sin(2 * pi * X(p)) * Y(p),
                     lambda p: st(2 * pi * np.cos(2 * pi * X(p)) * Y(p), np.sin(2 * pi * X(p)))),
        TestFunction("gauss", lambda p: _bump(p, c0, 0.3)[0], lambda p: _bump(p, c0, 0.3)[1]),
        TestFunction("exp_mix", lambda p: np.exp(X(p) - Y(p) / 2),
                     lambda p: st(np.exp(X(p) - Y(p) / 2), -0.5 * np.exp(X(p) - Y(p) / 2))),
    ]


def _suite_1d():
    pi = np.pi
    X = lambda p: p[:, 0]
    col = lambda v: v[:, None]
    return [
        TestFunction("const", lambda p: np.ones(len(p)), lambda p: np.zeros_like(p)),
        TestFunction("x", X, lambda p: np.ones_like(p)),
        TestFunction("x2", lambda p: X(p) ** 2, lambda p: col(2 * X(p))),
        TestFunction("x3-x", lambda p: X(p) ** 3 - X(p), lambda p: col(3 * X(p) ** 2 - 1)),
        TestFunction("sinpix", lambda p: np.sin(pi * X(p)), lambda p: col(pi * np.cos(pi * X(p)))),
        TestFunction("cos2pix", lambda p: np.cos(2 * pi * X(p)),
                     lambda p: col(-2 * pi * np.sin(2 * pi * X(p)))),
        TestFunction("exp", lambda p: np.exp(X(p)), lambda p: col(np.exp(X(p)))),
        TestFunction("gauss", lambda p: _bump(p, np.array([0.4]), 0.25)[0],
                     lambda p: _bump(p, np.array([0.4]), 0.25)[1]),
        TestFunction("rational", lambda p: 1 / (1 + X(p) ** 2),
                     lambda p: col(-2 * X(p) / (1 + X(p) ** 2) ** 2)),
        TestFunction("sin3x_shift", lambda p: np.sin(3 * X(p) + 0.5),
                     lambda p: col(3 * np.cos(3 * X(p) + 0.5))),
    ]


def _jump_suite(x0=0.1, x1=0.6):
    """Functions equal to ``eta(x) [y > 0]`` plus smooth parts; ``eta`` vanishes for ``x <= x0``.

    On the slit square they are smooth in the domain but jump across the slit.
    The gradient returned is the one inside the domain.
    """
    def eta(x):
        return _quintic((x - x0) / (x1 - x0))

    def deta(x):
        return _quintic_d((x - x0) / (x1 - x0)) / (x1 - x0)

    def make(name, amp, smooth_f, smooth_g):
        def f(p):
            return amp * eta(p[:, 0]) * (p[:, 1] > 0) + smooth_f(p)

        def g(p):
            up = (p[:, 1] > 0).astype(float)
            out = np.stack([amp * deta(p[:, 0]) * up, np.zeros(len(p))], axis=1)
            return out + smooth_g(p)

        return TestFunction(name, f, g, smooth=False)

    zero = lambda p: np.zeros(len(p))
    zero_g = lambda p: np.zeros_like(p)
    return [
        make("jump", 1.0, zero, zero_g),
        make("jump_plus_x", 1.0, lambda p: p[:, 0], lambda p: np.stack(
            [np.ones(len(p)), np.zeros(len(p))], axis=1)),
        make("jump_half_gauss", 0.5, lambda p: _bump(p, np.array([-0.4, 0.2]), 0.4)[0],
             lambda p: _bump(p, np.array([-0.4, 0.2]), 0.4)[1]),
    ]


SUITES = {
    "smooth2d": _suite_2d,
    "smooth1d": _suite_1d,
    "jump": _jump_suite,
}


def get_suite(name):
    try:
        return SUITES[name]()
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None


def product_suite(name="smooth2d"):
    """A planar suite viewed as functions ``f(x, y)`` on a product of intervals."""
    out = []
    for t in get_suite(name):
        out.append(TestFunction(t.name, lambda x, y, t=t: t(np.hstack([x, y])),
                                lambda x, y, t=t: t.gradient(np.hstack([x, y]))))
    return out
