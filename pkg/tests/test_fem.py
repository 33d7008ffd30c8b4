"""Solver correctness: element matrices, patch tests, adjoints, interpolation."""

import numpy as np
import pytest

from microrom import (BoundaryCondition, ConfigError, MacroCellPartition,
                      SolveError, Solver, StructuredGrid,
                      interpolation_matrix)
from microrom.fem import element_stiffness_1d, element_stiffness_2d

from conftest import make_solver


# ---------------------------------------------------------------------------
# element matrices

def test_element_stiffness_1d_exact():
    K = element_stiffness_1d(0.25)
    assert np.allclose(K, 4.0 * np.array([[1, -1], [-1, 1]]), atol=1e-14)


def test_element_stiffness_2d_matches_hand_integration():
    # exact integral of grad(N_i).grad(N_j) over a square element, any size
    expected = (1.0 / 6.0) * np.array([
        [4, -1, -2, -1],
        [-1, 4, -1, -2],
        [-2, -1, 4, -1],
        [-1, -2, -1, 4],
    ])
    for h in (1.0, 0.125):
        K = element_stiffness_2d(h, h)
        assert np.allclose(K, expected, atol=1e-13)


def test_element_stiffness_rows_sum_to_zero():
    # constants are in the kernel, for anisotropic element sizes too
    assert np.allclose(element_stiffness_2d(0.4, 0.2).sum(axis=1), 0,
                       atol=1e-13)
    assert np.allclose(element_stiffness_1d(0.2).sum(axis=1), 0, atol=1e-13)


# ---------------------------------------------------------------------------
# patch tests: constant-coefficient problems reproduce the boundary field

# At unit conductivity the imposed flux data equals the true flux of u_hat,
# so the discrete solution must reproduce u_hat at every node exactly. At
# lam = c the prescribed TOTAL flux stays the same, so the deviation from the
# pinned corner scales by 1/c instead (checked further down).

@pytest.mark.parametrize("nel,a", [
    ((16,), (0.3, 1.7, 0.0, 0.0)),
    ((5,), (-1.0, 0.25, 0.0, 0.0)),
])
def test_patch_1d(nel, a):
    grid = StructuredGrid.make(1, nel)
    solver = make_solver(grid, a)
    u = solver.solve(np.ones(grid.n_elements))
    exact = solver.bc.u_hat(grid.node_coords)
    assert np.max(np.abs(u - exact)) <= 1e-10 * max(1.0, np.abs(exact).max())


@pytest.mark.parametrize("nel,a", [
    ((4, 4), (0.2, 1.3, -0.7, 0.9)),
    ((6, 3), (0.0, 800.0, 1200.0, -2000.0)),
])
def test_patch_2d(nel, a):
    grid = StructuredGrid.make(2, nel)
    solver = make_solver(grid, a)
    u = solver.solve(np.ones(grid.n_elements))
    exact = solver.bc.u_hat(grid.node_coords)
    assert np.max(np.abs(u - exact)) <= 1e-10 * max(1.0, np.abs(exact).max())


def test_patch_scaled_conductivity():
    # same data at lam = 4: nodal deviations from the corner quarter
    grid = StructuredGrid.make(2, (4, 4))
    solver = make_solver(grid, (0.2, 1.3, -0.7, 0.9))
    u = solver.solve(np.full(grid.n_elements, 4.0))
    exact = solver.bc.u_hat(grid.node_coords)
    assert np.allclose(u, 0.2 + (exact - 0.2) / 4.0, atol=1e-10)


def test_load_vector_balances():
    # imposed boundary fluxes of a harmonic field must sum to zero
    grid = StructuredGrid.make(2, (5, 7))
    solver = make_solver(grid, (0.4, -2.0, 1.1, 3.5))
    assert abs(solver.f_full.sum()) < 1e-12 * max(1.0, np.abs(solver.f_full).max())


def test_conductivity_scaling_law():
    # K(c lam) = c K(lam) and the load does not depend on lam, so the
    # deviation from the pinned corner value scales like 1/c
    grid = StructuredGrid.make(2, (6, 6))
    solver = make_solver(grid, (0.5, 1.0, -2.0, 0.8))
    rs = np.random.default_rng(7)
    lam = np.where(rs.random(grid.n_elements) < 0.5, 1.0, 10.0)
    u1 = solver.solve(lam)
    c = 3.7
    u2 = solver.solve(c * lam)
    assert np.allclose(u2 - 0.5, (u1 - 0.5) / c, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# input validation and the two factorization paths

def test_rejects_bad_conductivity(grid2d):
    solver = make_solver(grid2d, (0, 1, 1, 0))
    with pytest.raises(ConfigError):
        solver.solve(np.ones(3))  # wrong length
    with pytest.raises(SolveError):
        solver.solve(np.zeros(grid2d.n_elements))
    lam = np.ones(grid2d.n_elements)
    lam[2] = -1.0
    with pytest.raises(SolveError):
        solver.solve(lam)
    lam = np.ones(grid2d.n_elements)
    lam[0] = np.nan
    with pytest.raises(SolveError):
        solver.solve(lam)


def test_dense_and_sparse_paths_agree():
    grid = StructuredGrid.make(2, (7, 5))
    bc = BoundaryCondition.corner_dirichlet(grid, np.array([0.1, 2.0, -1.0, 0.5]))
    rs = np.random.default_rng(11)
    lam = rs.uniform(0.5, 4.0, grid.n_elements)
    dense = Solver(grid, bc, dense_limit=10_000).solve(lam)
    sparse = Solver(grid, bc, dense_limit=0).solve(lam)
    assert np.allclose(dense, sparse, rtol=1e-11, atol=1e-13)


def test_solution_is_deterministic(grid2d):
    solver = make_solver(grid2d, (0, 1, 1, 0))
    lam = np.linspace(0.5, 2.5, grid2d.n_elements)
    assert np.array_equal(solver.solve(lam), solver.solve(lam))


# ---------------------------------------------------------------------------
# adjoint gradients

def _fd_gradient(solver, lam, dq_du, h=1e-6):
    g = np.zeros_like(lam)
    for e in range(lam.size):
        step = h * max(lam[e], 1.0)
        lp = lam.copy(); lp[e] += step
        lm = lam.copy(); lm[e] -= step
        g[e] = (dq_du @ solver.solve(lp) - dq_du @ solver.solve(lm)) / (2 * step)
    return g


@pytest.mark.parametrize("dim,nel", [(1, (6,)), (2, (3, 3))])
def test_adjoint_gradient_matches_finite_differences(dim, nel):
    grid = StructuredGrid.make(dim, nel)
    a = (0.2, 1.4, -0.6, 0.9) if dim == 2 else (0.2, 1.4, 0.0, 0.0)
    solver = make_solver(grid, a)
    rs = np.random.default_rng(5)
    lam = rs.uniform(0.5, 3.0, grid.n_elements)
    dq_du = rs.standard_normal(grid.n_nodes)
    u, again = solver.solve_with_factor(lam)
    g = solver.adjoint_gradient(lam, u, dq_du, again)
    g_fd = _fd_gradient(solver, lam, dq_du)
    denom = max(np.abs(g_fd).max(), 1e-12)
    assert np.max(np.abs(g - g_fd)) / denom <= 1e-5


def test_adjoint_gradient_without_prefactorization(grid1d):
    solver = make_solver(grid1d, (0.0, 1.0, 0.0, 0.0))
    lam = np.linspace(1.0, 2.0, grid1d.n_elements)
    u = solver.solve(lam)
    dq = np.ones(grid1d.n_nodes)
    g1 = solver.adjoint_gradient(lam, u, dq)
    _, again = solver.solve_with_factor(lam)
    g2 = solver.adjoint_gradient(lam, u, dq, again)
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# coarse-to-fine interpolation and the macro-cell partition

def test_interpolation_reproduces_bilinear_fields():
    coarse = StructuredGrid.make(2, (2, 2))
    fine = StructuredGrid.make(2, (8, 8))
    W = interpolation_matrix(coarse, fine)
    assert np.allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0, atol=1e-13)

    def field(xy):
        return 0.3 - 1.2 * xy[:, 0] + 0.7 * xy[:, 1] + 2.0 * xy[:, 0] * xy[:, 1]

    assert np.allclose(W @ field(coarse.node_coords), field(fine.node_coords),
                       atol=1e-12)


def test_interpolation_1d_linear():
    coarse = StructuredGrid.make(1, (2,))
    fine = StructuredGrid.make(1, (6,))
    W = interpolation_matrix(coarse, fine)
    x = fine.node_coords[:, 0]
    assert np.allclose(W @ np.array([1.0, 0.0, 3.0]),
                       np.where(x <= 0.5, 1 - 2 * x, 6 * x - 3), atol=1e-13)


def test_partition_covers_all_elements():
    coarse = StructuredGrid.make(2, (2, 3))
    fine = StructuredGrid.make(2, (8, 12))
    part = MacroCellPartition.build(coarse, fine)
    assert part.n_cells == 6
    members = np.concatenate(part.cell_members)
    assert np.array_equal(np.sort(members), np.arange(fine.n_elements))
    assert all(m.size == 16 for m in part.cell_members)


def test_partition_requires_nested_grids():
    with pytest.raises(ConfigError):
        MacroCellPartition.build(StructuredGrid.make(2, (3, 3)),
                                 StructuredGrid.make(2, (8, 8)))


def test_cell_image_layout():
    # fine elements are numbered x-fastest; the cell image must follow
    coarse = StructuredGrid.make(2, (2, 2))
    fine = StructuredGrid.make(2, (4, 4))
    part = MacroCellPartition.build(coarse, fine)
    vals = np.arange(16.0)
    img = part.cell_image(vals, 0)  # lower-left cell
    assert img.shape == (2, 2)
    assert np.array_equal(img, np.array([[0.0, 1.0], [4.0, 5.0]]))
    img3 = part.cell_image(vals, 3)  # upper-right cell
    assert np.array_equal(img3, np.array([[10.0, 11.0], [14.0, 15.0]]))
