"""Finite element assembly and solves for -div(lam grad u) = 0 on structured grids.

Element-constant conductivity, linear (1D) / bilinear quad (2D, 2x2 Gauss)
elements. Essential values are eliminated symmetrically so the reduced system
stays SPD; the prescribed total flux enters the load, which therefore does not
depend on lam and is assembled once per (grid, bc) pair.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolveError

RESID_TOL = 1e-10
_GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def element_stiffness_1d(h):
    return (1.0 / h) * np.array([[1.0, -1.0], [-1.0, 1.0]])


def element_stiffness_2d(hx, hy):
    """Bilinear quad stiffness for unit conductivity, nodes counter-clockwise."""
    K = np.zeros((4, 4))
    det = hx * hy / 4.0
    for xi in _GAUSS_1D:
        for eta in _GAUSS_1D:
            dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            grad = np.stack([dxi * 2.0 / hx, deta * 2.0 / hy])
            K += det * grad.T @ grad
    return K


class Solver:
    """Reusable solve context for one (grid, bc) pair.

    Immutable after construction. The load vector, element stiffness template,
    and scatter indices are precomputed; per-lam work is assembly plus one
    factorization. Small systems use dense Cholesky, large ones sparse LU.
    """

    def __init__(self, grid, bc, dense_limit=1200):
        self.grid = grid
        self.bc = bc
        if grid.dim == 1:
            self.K_ref = element_stiffness_1d(grid.spacing[0])
        else:
            self.K_ref = element_stiffness_2d(*grid.spacing)
        self.elem_nodes = grid.elem_nodes
        n = grid.n_nodes
        self.n_nodes = n
        dir_nodes = np.asarray(bc.dirichlet_nodes, dtype=int)
        if dir_nodes.size == 0:
            raise ConfigError("no essential boundary values: system is singular")
        mask = np.ones(n, dtype=bool)
        mask[dir_nodes] = False
        self.free = np.flatnonzero(mask)
        self.dir_nodes = dir_nodes
        self.u_dir = bc.u_hat(grid.node_coords[dir_nodes])
        self.f_full = self._assemble_load()
        self.dense = n <= dense_limit
        k = self.elem_nodes.shape[1]
        rows = np.repeat(self.elem_nodes, k, axis=1).ravel()
        cols = np.tile(self.elem_nodes, (1, k)).ravel()
        if self.dense:
            self._flat_idx = rows * n + cols
            self._kref_flat = self.K_ref.ravel()
        else:
            self._coo_rows = rows
            self._coo_cols = cols

    def _assemble_load(self):
        f = np.zeros(self.n_nodes)
        nodes, normals = self.bc.neumann_nodes, self.bc.neumann_normals
        coords = self.grid.node_coords
        if self.grid.dim == 1:
            for (node,), nrm in zip(nodes, normals):
                h_n = float(self.bc.flux(coords[node])[0, 0] * nrm[0])
                f[node] -= h_n
            return f
        for (n1, n2), nrm in zip(nodes, normals):
            p1, p2 = coords[n1], coords[n2]
            length = np.linalg.norm(p2 - p1)
            for xi in _GAUSS_1D:
                x = 0.5 * (p1 + p2) + 0.5 * xi * (p2 - p1)
                h_n = float(self.bc.flux(x)[0] @ nrm)
                f[n1] -= 0.5 * length * 0.5 * (1 - xi) * h_n
                f[n2] -= 0.5 * length * 0.5 * (1 + xi) * h_n
        return f

    def _check_lam(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.grid.n_elements,):
            raise ConfigError(
                f"lam must have shape ({self.grid.n_elements},), got {lam.shape}")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
            raise SolveError("conductivity must be positive and finite")
        return lam

    def assemble(self, lam):
        """Reduced SPD stiffness and load for the given element conductivities."""
        lam = self._check_lam(lam)
        if self.dense:
            K = np.zeros(self.n_nodes * self.n_nodes)
            np.add.at(K, self._flat_idx,
                      (lam[:, None] * self._kref_flat).ravel())
            K = K.reshape(self.n_nodes, self.n_nodes)
            K_red = K[np.ix_(self.free, self.free)]
            f_red = self.f_full[self.free] - K[np.ix_(self.free, self.dir_nodes)] @ self.u_dir
            return K_red, f_red
        data = (lam[:, None] * self.K_ref.ravel()).ravel()
        K = sp.coo_matrix((data, (self._coo_rows, self._coo_cols)),
                          shape=(self.n_nodes, self.n_nodes)).tocsr()
        K_red = K[self.free][:, self.free]
        f_red = self.f_full[self.free] - K[self.free][:, self.dir_nodes] @ self.u_dir
        return K_red, f_red

    def solve_with_factor(self, lam):
        """Full nodal solution plus the factorization for adjoint reuse."""
        K_red, f_red = self.assemble(lam)
        if self.dense:
            try:
                factor = scipy.linalg.cho_factor(K_red, check_finite=False)
            except scipy.linalg.LinAlgError as exc:
                raise SolveError(f"Cholesky factorization failed: {exc}")
            u_free = scipy.linalg.cho_solve(factor, f_red, check_finite=False)
            solve_again = lambda rhs: scipy.linalg.cho_solve(factor, rhs, check_finite=False)
            resid = np.abs(K_red @ u_free - f_red).max()
        else:
            lu = spla.splu(K_red.tocsc())
            u_free = lu.solve(f_red)
            solve_again = lu.solve
            resid = np.abs(K_red @ u_free - f_red).max()
        denom = np.abs(f_red).max() or 1.0
        if not np.isfinite(resid) or resid / denom > RESID_TOL:
            raise SolveError(
                f"linear solve residual {resid / denom:.3e} exceeds {RESID_TOL:.1e}",
                residual=resid / denom)
        u = np.empty(self.n_nodes)
        u[self.free] = u_free
        u[self.dir_nodes] = self.u_dir
        return u, solve_again

    def solve(self, lam):
        u, _ = self.solve_with_factor(lam)
        return u

    def adjoint_gradient(self, lam, u, dq_du, solve_again=None):
        """Gradient of a functional q(u(lam)) with respect to element conductivities.

        dq_du is the (full-length) partial derivative of q in the nodal values.
        One extra solve with the already-factorized matrix gives the whole
        gradient; entries at essential nodes contribute nothing because their
        values do not move with lam.
        """
        lam = self._check_lam(lam)
        if solve_again is None:
            _, solve_again = self.solve_with_factor(lam)
        mu = np.zeros(self.n_nodes)
        mu[self.free] = solve_again(np.asarray(dq_du, dtype=float)[self.free])
        U = u[self.elem_nodes]
        M = mu[self.elem_nodes]
        return -np.einsum("ei,ij,ej->e", M, self.K_ref, U)


def assemble_system(grid, lam, bc):
    return Solver(grid, bc).assemble(lam)


def solve(grid, lam, bc):
    """Nodal solution for the given conductivity field and boundary data."""
    return Solver(grid, bc).solve(lam)


def adjoint_gradient(grid, lam, bc, u, dq_du):
    return Solver(grid, bc).adjoint_gradient(lam, u, dq_du)
