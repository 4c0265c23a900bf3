import time

import numpy as np
import pytest

from lbconvex.boundary_flux import BoundaryTemperature
from lbconvex.collision import KineticModel
from lbconvex.geometry import Ellipsoid, Sphere
from lbconvex.transport import picard_solve
from lbconvex.velocity import VelocityGrid
from lbconvex.volume import star_shells

# (criterion, verdict, detail) lines collected by the acceptance tests
ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    verdict = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    line = f"criterion {criterion}: {verdict} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model():
    return KineticModel()


@pytest.fixture(scope="session")
def grid():
    return VelocityGrid()


@pytest.fixture(scope="session")
def sphere():
    return Sphere()


@pytest.fixture(scope="session")
def ellipsoid():
    return Ellipsoid()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Solved:
    """A converged solve plus the objects it was built from."""

    def __init__(self, domain, grid, model, T, **kw):
        self.domain, self.grid, self.model, self.T = domain, grid, model, T
        self.volume = star_shells(domain)
        self.mesh = domain.mesh(16)
        t0 = time.perf_counter()
        self.result = picard_solve(domain, grid, model, self.volume, self.mesh, T, **kw)
        self.seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def sphere_solution(sphere, grid, model):
    """T = 0.05 on the unit sphere, plain Picard so the residual decay is visible."""
    return Solved(sphere, grid, model, BoundaryTemperature.constant(0.05), anderson=0)


@pytest.fixture(scope="session")
def ellipsoid_solution(ellipsoid, grid, model):
    return Solved(ellipsoid, grid, model, BoundaryTemperature.linear(1.0, (0.1, 0.0, 0.0)))
