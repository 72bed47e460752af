"""Quadrature rules on triangles and edges, exact to a requested degree.

Triangle rules use the conical (Duffy-collapsed) Gauss-Legendre x
Gauss-Jacobi product, whose exactness follows directly from the 1-D
rules; weights are strictly positive.  Edge rules are plain
Gauss-Legendre.  Rules are stored in reference coordinates (barycentric
on the unit triangle, xi in [-1,1] on edges) and mapped to mesh
entities on demand.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .mesh import Mesh

__all__ = [
    "QuadratureRule",
    "UnsupportedDegreeError",
    "cell_quadrature",
    "edge_quadrature",
    "MAX_EXACT_DEGREE",
]

MAX_EXACT_DEGREE = 10


class UnsupportedDegreeError(ValueError):
    """Requested polynomial exactness outside the supported range."""


@dataclass(frozen=True)
class QuadratureRule:
    """Reference-domain rule.

    For ``kind == "cell"`` the points are barycentric triples on the
    reference triangle and the weights sum to its area 1/2.  For
    ``kind == "edge"`` the points are 1-D Gauss coordinates in [-1, 1]
    and the weights sum to 2.  after mapping to a mesh entity the
    weights sum to |T| or |F|.
    """

    kind: str
    degree: int
    points: np.ndarray
    weights: np.ndarray

    def map_to_cell(self, mesh: Mesh, cell: int) -> tuple[np.ndarray, np.ndarray]:
        """Physical points (n, 2) and weights summing to |T|."""
        verts = mesh.vertex_coords[mesh.cell_vertices[cell]]
        pts = self.points @ verts
        w = self.weights * (2.0 * abs(mesh.cell_areas[cell]))
        return pts, w

    def map_to_edge(self, mesh: Mesh, edge: int) -> tuple[np.ndarray, np.ndarray]:
        """Physical points (n, 2) and weights summing to |F|."""
        p0, p1 = mesh.vertex_coords[mesh.edge_vertices[edge]]
        t = 0.5 * (self.points + 1.0)
        pts = np.outer(1.0 - t, p0) + np.outer(t, p1)
        w = self.weights * (0.5 * mesh.edge_lengths[edge])
        return pts, w


@lru_cache(maxsize=None)
def cell_quadrature(exact_degree: int) -> QuadratureRule:
    """Rule on the reference triangle exact for total degree <= exact_degree."""
    if not 0 <= exact_degree <= MAX_EXACT_DEGREE:
        raise UnsupportedDegreeError(
            f"cell quadrature supports exactness 0..{MAX_EXACT_DEGREE}, got {exact_degree}"
        )
    n = max(1, (exact_degree + 2) // 2)  # ceil((p+1)/2)

    # xi: Gauss-Legendre on [0,1]; eta: Gauss-Jacobi absorbing the (1-eta)
    # Duffy Jacobian.  x = xi (1 - eta), y = eta.
    x_leg, w_leg = leggauss(n)
    xi = 0.5 * (x_leg + 1.0)
    w_xi = 0.5 * w_leg
    x_jac, w_jac = roots_jacobi(n, 1.0, 0.0)
    eta = 0.5 * (x_jac + 1.0)
    w_eta = 0.25 * w_jac

    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    x = (XI * (1.0 - ETA)).ravel()
    y = ETA.ravel()
    w = np.outer(w_xi, w_eta).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule("cell", exact_degree, bary, w)


@lru_cache(maxsize=None)
def edge_quadrature(exact_degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [-1, 1], exact for degree <= exact_degree."""
    if not 0 <= exact_degree <= MAX_EXACT_DEGREE:
        raise UnsupportedDegreeError(
            f"edge quadrature supports exactness 0..{MAX_EXACT_DEGREE}, got {exact_degree}"
        )
    n = max(1, (exact_degree + 2) // 2)
    x, w = leggauss(n)
    return QuadratureRule("edge", exact_degree, x, w)
