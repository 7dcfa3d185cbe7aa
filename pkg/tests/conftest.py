import numpy as np
import pytest

from fluxbound.fields import Domain, Grid
from fluxbound.neumann import NeumannSpectralPlan

# lines recorded by the acceptance suite, printed once at the end of the run
ACCEPTANCE_LINES = {}


def record(key, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
    ACCEPTANCE_LINES[key] = (ok, line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key][1])


@pytest.fixture
def box32():
    g = Grid(Domain.periodic_box(), 32, 32)
    return g, NeumannSpectralPlan(g)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_random(grid, rng, modes=6, decay=2.0, mean_free=True):
    """Random cosine series with decaying amplitudes, sampled at the nodes."""
    from fluxbound.fields import ScalarField
    X, Y = grid.mesh()
    d = grid.domain
    v = np.zeros(grid.shape)
    for i in range(modes):
        for j in range(modes):
            if i == 0 and j == 0:
                continue
            a = rng.standard_normal() / (1 + i * i + j * j) ** (decay / 2)
            v += a * np.cos(np.pi * i * (X - d.x_min) / d.lx) * np.cos(np.pi * j * (Y - d.y_min) / d.ly)
    return ScalarField(grid, v, mean_free=mean_free)


def random_stream(grid, rng, modes=5):
    """Random sine-series stream function vanishing on the boundary."""
    from fluxbound.fields import ScalarField
    X, Y = grid.mesh()
    d = grid.domain
    v = np.zeros(grid.shape)
    for i in range(1, modes + 1):
        for j in range(1, modes + 1):
            a = rng.standard_normal() / (i * i + j * j)
            v += a * np.sin(np.pi * i * (X - d.x_min) / d.lx) * np.sin(np.pi * j * (Y - d.y_min) / d.ly)
    return ScalarField(grid, v)
