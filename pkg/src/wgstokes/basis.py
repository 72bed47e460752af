"""Scaled-monomial polynomial bases on cells and edges.

Cell bases are monomials in ((x - xc)/h_T, (y - yc)/h_T) anchored at
the cell centroid; edge bases are monomials in the arc-length
coordinate centered at the edge midpoint and scaled by |F|.  The
scaling keeps local Gram matrices uniformly conditioned across
refinement levels, so plain Gram solves are safe and no
orthonormalization is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh

__all__ = [
    "CellBasis",
    "EdgeBasis",
    "cell_basis",
    "edge_basis",
    "dim_pk",
    "eval_cell_basis",
]


def dim_pk(r: int) -> int:
    """Dimension of total-degree-r polynomials in two variables."""
    return (r + 1) * (r + 2) // 2


@dataclass(frozen=True)
class CellBasis:
    """Scaled monomial basis of P_r(T), graded-lexicographic order."""

    degree: int
    exponents: np.ndarray  # (dim, 2)

    @property
    def dim(self) -> int:
        return self.exponents.shape[0]

    def eval(self, centroid, h, pts):
        """Values (n, dim) and gradients (n, dim, 2) at physical points."""
        pts = np.atleast_2d(pts)
        xi = (pts[:, 0] - centroid[0]) / h
        eta = (pts[:, 1] - centroid[1]) / h
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        # powers up to degree, then broadcast over the exponent table
        pow_xi = np.power(xi[:, None], np.arange(self.degree + 1)[None, :])
        pow_eta = np.power(eta[:, None], np.arange(self.degree + 1)[None, :])
        vals = pow_xi[:, a] * pow_eta[:, b]
        grads = np.zeros((pts.shape[0], self.dim, 2))
        nzx = a > 0
        grads[:, nzx, 0] = (a[nzx] / h) * pow_xi[:, a[nzx] - 1] * pow_eta[:, b[nzx]]
        nzy = b > 0
        grads[:, nzy, 1] = (b[nzy] / h) * pow_xi[:, a[nzy]] * pow_eta[:, b[nzy] - 1]
        return vals, grads


@dataclass(frozen=True)
class EdgeBasis:
    """Monomials t^r in the centered arc-length coordinate t = s/|F|."""

    degree: int

    @property
    def dim(self) -> int:
        return self.degree + 1

    def eval(self, mesh: Mesh, edge: int, pts):
        """Values (n, dim) at physical points lying on the edge."""
        pts = np.atleast_2d(pts)
        p0, p1 = mesh.vertex_coords[mesh.edge_vertices[edge]]
        length = mesh.edge_lengths[edge]
        tau = (p1 - p0) / length
        mid = 0.5 * (p0 + p1)
        t = ((pts - mid) @ tau) / length  # in [-1/2, 1/2]
        return np.power(t[:, None], np.arange(self.dim)[None, :])


@lru_cache(maxsize=None)
def cell_basis(degree: int) -> CellBasis:
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    exps = [(d - i, i) for d in range(degree + 1) for i in range(d + 1)]
    return CellBasis(degree, np.array(exps, dtype=np.int64))


@lru_cache(maxsize=None)
def edge_basis(degree: int) -> EdgeBasis:
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    return EdgeBasis(degree)


def cell_geometry(mesh: Mesh, cell: int) -> tuple[np.ndarray, float]:
    """Centroid and diameter of a cell (the basis anchor data)."""
    centroid = mesh.vertex_coords[mesh.cell_vertices[cell]].mean(axis=0)
    return centroid, float(mesh.cell_diameters[cell])


def eval_cell_basis(basis: CellBasis, mesh: Mesh, cell: int, bary_points):
    """Evaluate a cell basis at barycentric points of the given cell.

    Returns the value matrix (n, dim) and gradient tensor (n, dim, 2).
    """
    bary = np.atleast_2d(bary_points)
    verts = mesh.vertex_coords[mesh.cell_vertices[cell]]
    pts = bary @ verts
    centroid, h = cell_geometry(mesh, cell)
    return basis.eval(centroid, h, pts)
