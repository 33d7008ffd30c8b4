"""Structured grids on [0,1]^d, boundary data, and coarse-to-fine interpolation.

Grids are uniform tilings of the unit interval (2-node line elements) or the
unit square (4-node bilinear quads, nodes ordered counter-clockwise). Node and
element indices are row-major with x running fastest, so a 2D element field
reshapes to an image via ``lam.reshape(nel_y, nel_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform structured grid on the unit domain."""

    dim: int
    nel_per_axis: tuple
    node_coords: np.ndarray = field(repr=False)
    elem_nodes: np.ndarray = field(repr=False)

    @classmethod
    def interval(cls, nel):
        if nel < 1:
            raise ConfigError("interval grid needs at least one element")
        coords = np.linspace(0.0, 1.0, nel + 1)[:, None]
        elems = np.stack([np.arange(nel), np.arange(1, nel + 1)], axis=1)
        return cls(1, (nel,), coords, elems)

    @classmethod
    def square(cls, nel_x, nel_y=None):
        nel_y = nel_x if nel_y is None else nel_y
        if nel_x < 1 or nel_y < 1:
            raise ConfigError("square grid needs at least one element per axis")
        nx, ny = nel_x + 1, nel_y + 1
        xs = np.linspace(0.0, 1.0, nx)
        ys = np.linspace(0.0, 1.0, ny)
        X, Y = np.meshgrid(xs, ys)  # row-major, x fastest
        coords = np.stack([X.ravel(), Y.ravel()], axis=1)
        j, i = np.divmod(np.arange(nel_x * nel_y), nel_x)
        n0 = j * nx + i
        # counter-clockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1)
        elems = np.stack([n0, n0 + 1, n0 + 1 + nx, n0 + nx], axis=1)
        return cls(2, (nel_x, nel_y), coords, elems)

    @classmethod
    def make(cls, dim, nel_per_axis):
        if dim == 1:
            (nel,) = tuple(nel_per_axis)
            return cls.interval(nel)
        if dim == 2:
            nel_x, nel_y = tuple(nel_per_axis)
            return cls.square(nel_x, nel_y)
        raise ConfigError(f"unsupported dim {dim}")

    @property
    def n_elements(self):
        return int(np.prod(self.nel_per_axis))

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def spacing(self):
        return tuple(1.0 / n for n in self.nel_per_axis)

    def element_centers(self):
        """Centers of all elements, shape (n_elements, dim)."""
        return self.node_coords[self.elem_nodes].mean(axis=1)

    def boundary_edges(self):
        """Boundary facets with outward normals.

        Returns (nodes, normals): for 2D, nodes is (n_edges, 2) node pairs and
        normals is (n_edges, 2); for 1D, nodes is (2, 1) holding the two end
        nodes and normals is (2, 1) with -1 / +1.
        """
        if self.dim == 1:
            nel = self.nel_per_axis[0]
            nodes = np.array([[0], [nel]])
            normals = np.array([[-1.0], [1.0]])
            return nodes, normals
        nel_x, nel_y = self.nel_per_axis
        nx = nel_x + 1
        edges = []
        normals = []
        for i in range(nel_x):  # bottom y=0 and top y=1
            edges.append((i, i + 1))
            normals.append((0.0, -1.0))
            base = nel_y * nx
            edges.append((base + i, base + i + 1))
            normals.append((0.0, 1.0))
        for j in range(nel_y):  # left x=0 and right x=1
            edges.append((j * nx, (j + 1) * nx))
            normals.append((-1.0, 0.0))
            edges.append((j * nx + nel_x, (j + 1) * nx + nel_x))
            normals.append((1.0, 0.0))
        return np.asarray(edges), np.asarray(normals)


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary data u_hat = a0 + a1*x1 + a2*x2 + a3*x1*x2.

    Essential values are pinned at ``dirichlet_nodes``; the flux h_hat = -grad
    u_hat is prescribed on the listed Neumann facets (the total normal flux
    -lam * grad u . n is set to h_hat . n, so the load does not depend on lam).
    """

    a: np.ndarray
    dirichlet_nodes: np.ndarray
    neumann_nodes: np.ndarray = field(repr=False)
    neumann_normals: np.ndarray = field(repr=False)

    @classmethod
    def corner_dirichlet(cls, grid, a):
        """Pin u_hat at the origin node, flux everywhere else on the boundary."""
        a = np.asarray(a, dtype=float)
        if a.shape != (4,):
            raise ConfigError("boundary coefficients must be a length-4 vector")
        nodes, normals = grid.boundary_edges()
        return cls(a, np.array([0]), nodes, normals)

    def u_hat(self, x):
        x = np.atleast_2d(x)
        if x.shape[1] == 1:
            return self.a[0] + self.a[1] * x[:, 0]
        return (self.a[0] + self.a[1] * x[:, 0] + self.a[2] * x[:, 1]
                + self.a[3] * x[:, 0] * x[:, 1])

    def flux(self, x):
        """h_hat = -grad u_hat evaluated at points x."""
        x = np.atleast_2d(x)
        if x.shape[1] == 1:
            return np.full((x.shape[0], 1), -self.a[1])
        hx = -(self.a[1] + self.a[3] * x[:, 1])
        hy = -(self.a[2] + self.a[3] * x[:, 0])
        return np.stack([hx, hy], axis=1)


def interpolation_matrix(coarse, fine):
    """Sparse matrix mapping coarse nodal values to fine nodal values.

    Each fine node is located inside a coarse element and receives that
    element's shape-function weights, so rows are convex combinations (they
    sum to one) and a fine node coincident with a coarse node gets weight one
    there. Exact for fields that are (bi)linear per coarse element.
    """
    if coarse.dim != fine.dim:
        raise ConfigError("grids must share dim")
    if coarse.dim == 1:
        ncx = coarse.nel_per_axis[0]
        x = fine.node_coords[:, 0]
        ex = np.clip((x * ncx).astype(int), 0, ncx - 1)
        xi = x * ncx - ex
        rows = np.repeat(np.arange(fine.n_nodes), 2)
        cols = np.stack([ex, ex + 1], axis=1).ravel()
        vals = np.stack([1.0 - xi, xi], axis=1).ravel()
    else:
        ncx, ncy = coarse.nel_per_axis
        x, y = fine.node_coords[:, 0], fine.node_coords[:, 1]
        ex = np.clip((x * ncx).astype(int), 0, ncx - 1)
        ey = np.clip((y * ncy).astype(int), 0, ncy - 1)
        xi = x * ncx - ex
        eta = y * ncy - ey
        n0 = ey * (ncx + 1) + ex
        cols = np.stack([n0, n0 + 1, n0 + 1 + ncx + 1, n0 + ncx + 1], axis=1)
        vals = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta),
                         xi * eta, (1 - xi) * eta], axis=1)
        rows = np.repeat(np.arange(fine.n_nodes), 4)
        cols = cols.ravel()
        vals = vals.ravel()
    W = sp.coo_matrix((vals, (rows, cols)), shape=(fine.n_nodes, coarse.n_nodes))
    return W.tocsr()


@dataclass(frozen=True)
class MacroCellPartition:
    """Assignment of fine elements to the coarse element (macro-cell) containing them.

    Requires nested grids (each coarse element tiles an integer block of fine
    elements) so cell sub-images are rectangular.
    """

    coarse: StructuredGrid
    fine: StructuredGrid
    cell_members: tuple = field(repr=False)
    cell_shape: tuple = field(default=None)

    @classmethod
    def build(cls, coarse, fine):
        if coarse.dim != fine.dim:
            raise ConfigError("grids must share dim")
        for nf, nc in zip(fine.nel_per_axis, coarse.nel_per_axis):
            if nf % nc != 0:
                raise ConfigError(
                    f"fine grid {fine.nel_per_axis} is not nested in coarse "
                    f"grid {coarse.nel_per_axis}")
        centers = fine.element_centers()
        if coarse.dim == 1:
            ncx = coarse.nel_per_axis[0]
            idx = np.clip((centers[:, 0] * ncx).astype(int), 0, ncx - 1)
            cell_shape = (1, fine.nel_per_axis[0] // ncx)
        else:
            ncx, ncy = coarse.nel_per_axis
            ix = np.clip((centers[:, 0] * ncx).astype(int), 0, ncx - 1)
            iy = np.clip((centers[:, 1] * ncy).astype(int), 0, ncy - 1)
            idx = iy * ncx + ix
            cell_shape = (fine.nel_per_axis[1] // ncy, fine.nel_per_axis[0] // ncx)
        members = tuple(np.flatnonzero(idx == k)
                        for k in range(coarse.n_elements))
        for m in members:
            if m.size == 0:
                raise ConfigError("macro-cell partition has an empty cell")
        return cls(coarse, fine, members, cell_shape)

    @property
    def n_cells(self):
        return self.coarse.n_elements

    def cell_image(self, lam_f, k):
        """Sub-image of fine element values inside macro-cell k, shape cell_shape."""
        return lam_f[self.cell_members[k]].reshape(self.cell_shape)

    def full_image(self, lam_f):
        """Whole fine element field as an image (rows = y ascending)."""
        if self.fine.dim == 1:
            return lam_f.reshape(1, -1)
        nel_x, nel_y = self.fine.nel_per_axis
        return lam_f.reshape(nel_y, nel_x)
