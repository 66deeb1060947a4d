import numpy as np
import pytest

from sobex.extension import assemble
from sobex.grid import Cube, GridSpec, rasterize
from sobex.partition import build_partition
from sobex.quasicubes import build_quasicubes
from sobex.shapes import Box
from sobex.whitney import decompose

H = 1 / 32


@pytest.fixture(scope="session")
def square_mask():
    n = int(4 / H)
    grid = GridSpec((-1.5, -1.5), H, (n, n))
    return rasterize(Box([0, 0], [1, 1]), grid)


@pytest.fixture(scope="session")
def square_window():
    return Cube((0.5, 0.5), 2.0)


@pytest.fixture(scope="session")
def square_family(square_mask, square_window):
    return decompose(square_mask, square_window)


@pytest.fixture(scope="session")
def square_basis(square_family):
    return build_partition(square_family)


@pytest.fixture(scope="session")
def square_qfam(square_family, square_mask):
    return build_quasicubes(square_family, square_mask, 0.5, 0.25)


@pytest.fixture(scope="session")
def square_map(square_qfam, square_basis):
    return assemble(square_qfam, square_basis)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line; returns the boolean for the assert."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
