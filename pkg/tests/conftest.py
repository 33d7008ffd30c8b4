import numpy as np
import pytest

from microrom import (BoundaryCondition, GrfSpec, PhaseSpec, Solver,
                      StructuredGrid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def grid1d():
    return StructuredGrid.make(1, (8,))


@pytest.fixture
def grid2d():
    return StructuredGrid.make(2, (4, 4))


def make_solver(grid, a):
    bc = BoundaryCondition.corner_dirichlet(grid, np.asarray(a, dtype=float))
    return Solver(grid, bc)
