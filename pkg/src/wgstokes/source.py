"""WG solver for the Stokes source problem, with manufactured solutions.

Solves the mixed system

    a_w(u_h, v) - c_w(v, p_h) = (f, v_0)   for all v,
    c_w(u_h, q) = 0                        for all q,

with homogeneous Dirichlet data, used to verify the source-problem
convergence rates.  Errors are measured against the projections of the
exact solution (e_V in the discrete V-norm, e_0 and e_p in L2), which
is the quantity the error analysis controls.

The module also evaluates the consistency functionals l_u and theta_p
appearing in the error equation

    a_w(e_h, v) - c_w(v, eps_h) = l_u(v) - theta_p(v) + s(Q_h u, v),

purely as diagnostics; they play no role in the solve path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    AssembledSystem,
    DATA_DEGREE,
    assemble,
    cell_geometry,
    project_gradient_tensor,
    project_pressure,
    project_qh,
    v_norm,
)
from .basis import cell_basis, edge_basis
from .eigensolver import RankDeficiencyError
from .mesh import Mesh
from .quadrature import cell_quadrature, edge_quadrature
from .space import GammaSchedule, StabilizerKind, WeakFunction, WgSpace

__all__ = [
    "ManufacturedCase",
    "SourceSolution",
    "stream_vortex_case",
    "solve_source",
    "error_functionals",
    "consistency_vectors",
    "lemma_a1_residuals",
]


@dataclass
class ManufacturedCase:
    """Exact Stokes data: divergence-free velocity, zero-mean pressure.

    All callbacks are vectorized: (n, 2) points -> values.  ``forcing``
    must equal -Laplace(u) + grad(p).
    """

    name: str
    velocity: Callable[[np.ndarray], np.ndarray]          # (n,2) -> (n,2)
    velocity_gradient: Callable[[np.ndarray], np.ndarray]  # (n,2) -> (n,2,2)
    pressure: Callable[[np.ndarray], np.ndarray]           # (n,2) -> (n,)
    forcing: Callable[[np.ndarray], np.ndarray]            # (n,2) -> (n,2)

    def check(self, mesh: Mesh, samples: int = 200, seed: int = 0) -> None:
        """Verify div u = 0 at random points and zero pressure mean."""
        rng = np.random.default_rng(seed)
        lo = mesh.vertex_coords.min(axis=0)
        hi = mesh.vertex_coords.max(axis=0)
        pts = lo + rng.random((samples, 2)) * (hi - lo)
        grad = np.asarray(self.velocity_gradient(pts))
        div = grad[:, 0, 0] + grad[:, 1, 1]
        if np.abs(div).max() > 1e-10:
            raise ValueError(f"case {self.name}: velocity is not divergence-free")
        rule = cell_quadrature(DATA_DEGREE)
        total = 0.0
        for c in range(mesh.num_cells):
            p, w = rule.map_to_cell(mesh, c)
            total += float(w @ np.asarray(self.pressure(p)))
        if abs(total) > 1e-10:
            raise ValueError(f"case {self.name}: pressure mean {total:.3e} is not zero")


def stream_vortex_case() -> ManufacturedCase:
    """Polynomial vortex on (0,1)^2 from psi = x^2(1-x)^2 y^2(1-y)^2.

    u = (psi_y, -psi_x) vanishes on the boundary together with its
    tangential derivative; p = xy - 1/4 has zero mean.  The forcing is
    hard-coded from the closed-form derivatives.
    """

    def g(t):
        return t * t * (1.0 - t) ** 2

    def dg(t):
        return 2.0 * t - 6.0 * t**2 + 4.0 * t**3

    def d2g(t):
        return 2.0 - 12.0 * t + 12.0 * t**2

    def d3g(t):
        return -12.0 + 24.0 * t

    def velocity(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([g(x) * dg(y), -dg(x) * g(y)])

    def velocity_gradient(pts):
        x, y = pts[:, 0], pts[:, 1]
        out = np.empty((len(pts), 2, 2))
        out[:, 0, 0] = dg(x) * dg(y)
        out[:, 0, 1] = g(x) * d2g(y)
        out[:, 1, 0] = -d2g(x) * g(y)
        out[:, 1, 1] = -dg(x) * dg(y)
        return out

    def pressure(pts):
        return pts[:, 0] * pts[:, 1] - 0.25

    def forcing(pts):
        x, y = pts[:, 0], pts[:, 1]
        f1 = -(d2g(x) * dg(y) + g(x) * d3g(y)) + y
        f2 = -(-d3g(x) * g(y) - dg(x) * d2g(y)) + x
        return np.column_stack([f1, f2])

    return ManufacturedCase(
        name="stream-vortex",
        velocity=velocity,
        velocity_gradient=velocity_gradient,
        pressure=pressure,
        forcing=forcing,
    )


@dataclass
class SourceSolution:
    """Discrete solution plus its projection-based error functionals."""

    u: WeakFunction
    p: np.ndarray
    e_v: float
    e_p: float
    e_0: float
    residual: float


def _forcing_vector(case: ManufacturedCase, space: WgSpace) -> np.ndarray:
    mesh = space.mesh
    rule = cell_quadrature(DATA_DEGREE)
    bask = cell_basis(space.k)
    Dk = space.dim_cell
    out = np.zeros(space.n_velocity)
    for c in range(mesh.num_cells):
        centroid, h_t = cell_geometry(mesh, c)
        pts, w = rule.map_to_cell(mesh, c)
        phi, _ = bask.eval(centroid, h_t, pts)
        fvals = np.asarray(case.forcing(pts))
        dofs = space.interior_dofs(c)
        for i in range(2):
            out[dofs[i * Dk:(i + 1) * Dk]] = phi.T @ (w * fvals[:, i])
    return out


def solve_source(
    mesh: Mesh,
    space: WgSpace,
    gamma: GammaSchedule,
    stabilizer: StabilizerKind,
    case: ManufacturedCase,
    system: AssembledSystem | None = None,
) -> SourceSolution:
    """Solve the mixed source system and evaluate the error functionals.

    The zero-mean pressure constraint is imposed by pinning one
    pressure DOF during the solve and shifting the mean afterwards.
    """
    if system is None:
        system = assemble(mesh, space, gamma, stabilizer)
    nv, npr = space.n_velocity, space.n_pressure

    f_vec = _forcing_vector(case, space)
    rhs = np.concatenate([f_vec, np.zeros(npr - 1)])

    keep = np.arange(npr) != 0
    b_kept = system.B[keep]
    h = sp.bmat(
        [[system.A, -b_kept.T], [-b_kept, None]],
        format="csc",
    )
    try:
        lu = spla.splu(h)
    except RuntimeError as exc:
        raise RankDeficiencyError(f"source system factorization failed: {exc}") from exc
    sol = lu.solve(rhs)

    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    residual = float(np.linalg.norm(h @ sol - rhs)) / scale

    u_h = WeakFunction(space, sol[:nv])
    p_h = np.zeros(npr)
    p_h[keep] = sol[nv:]

    # shift to zero mean
    area = float(np.abs(mesh.cell_areas).sum())
    const_rows = space.pressure_base
    p_h[const_rows] -= (system.pressure_mass @ p_h)[const_rows].sum() / area

    e_v, e_p, e_0 = error_functionals(system, u_h, p_h, case)
    return SourceSolution(u=u_h, p=p_h, e_v=e_v, e_p=e_p, e_0=e_0, residual=residual)


def error_functionals(
    system: AssembledSystem,
    u_h: WeakFunction,
    p_h: np.ndarray,
    case: ManufacturedCase,
) -> tuple[float, float, float]:
    """(e_V, e_p, e_0): projection-based velocity and pressure errors."""
    space = system.space
    qh_u = project_qh(case.velocity, space)
    diff = WeakFunction(space, qh_u.velocity - u_h.velocity)
    e_v = v_norm(diff)
    e_0 = float(np.sqrt(max(diff.velocity @ (system.M @ diff.velocity), 0.0)))
    dp = project_pressure(case.pressure, space) - p_h
    e_p = float(np.sqrt(max(dp @ (system.pressure_mass @ dp), 0.0)))
    return e_v, e_p, e_0


def consistency_vectors(
    system: AssembledSystem, case: ManufacturedCase
) -> tuple[np.ndarray, np.ndarray]:
    """Discrete representers of l_u and theta_p on the velocity DOFs.

    l_u(v)    = sum_T <v_0 - v_b, (grad u - Q_h grad u) n>_{dT}
    theta_p(v) = sum_T <v_0 - v_b, (p - Q_h p) n>_{dT}
    """
    space = system.space
    mesh = space.mesh
    k = space.k
    Dk, De = space.dim_cell, space.dim_edge
    bask = cell_basis(k)
    baskm1 = cell_basis(k - 1)
    base = edge_basis(k - 1)
    erule = edge_quadrature(DATA_DEGREE)

    ell = np.zeros(space.n_velocity)
    theta = np.zeros(space.n_velocity)
    for c in range(mesh.num_cells):
        centroid, h_t = cell_geometry(mesh, c)
        gcoef = project_gradient_tensor(case.velocity_gradient, space, c)
        pcoef = project_pressure_cell(case.pressure, space, c)
        idofs = space.interior_dofs(c)
        for j in range(3):
            e = mesh.cell_edges[c, j]
            n = mesh.cell_edge_normals[c, j]
            pts, w = erule.map_to_edge(mesh, e)
            phi, _ = bask.eval(centroid, h_t, pts)
            chi, _ = baskm1.eval(centroid, h_t, pts)

            grad = np.asarray(case.velocity_gradient(pts))
            gh = np.einsum("qm,im->qi", chi, gcoef.reshape(4, -1)).reshape(-1, 2, 2)
            wvec = np.einsum("qij,j->qi", grad - gh, n)

            pexact = np.asarray(case.pressure(pts))
            ph = chi @ pcoef
            zvec = (pexact - ph)[:, None] * n[None, :]

            for i in range(2):
                ell[idofs[i * Dk:(i + 1) * Dk]] += phi.T @ (w * wvec[:, i])
                theta[idofs[i * Dk:(i + 1) * Dk]] += phi.T @ (w * zvec[:, i])
            edofs = space.edge_dofs(e)
            if edofs is not None:
                psi = base.eval(mesh, e, pts)
                for i in range(2):
                    ell[edofs[i * De:(i + 1) * De]] -= psi.T @ (w * wvec[:, i])
                    theta[edofs[i * De:(i + 1) * De]] -= psi.T @ (w * zvec[:, i])
    return ell, theta


def project_pressure_cell(p, space: WgSpace, cell: int) -> np.ndarray:
    """P_{k-1} projection coefficients of a scalar field on one cell."""
    mesh = space.mesh
    centroid, h_t = cell_geometry(mesh, cell)
    rule = cell_quadrature(DATA_DEGREE)
    pts, w = rule.map_to_cell(mesh, cell)
    chi, _ = cell_basis(space.k - 1).eval(centroid, h_t, pts)
    gram = chi.T @ (w[:, None] * chi)
    return np.linalg.solve(gram, chi.T @ (w * np.asarray(p(pts))))


def lemma_a1_residuals(
    system: AssembledSystem,
    solution: SourceSolution,
    case: ManufacturedCase,
    n_tests: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """Error-equation residuals on random unit test functions.

    Checks a_w(e_h, v) - c_w(v, eps_h) = l_u(v) - theta_p(v) + s(Q_h u, v)
    with e_h = Q_h u - u_h and eps_h = Q_h p - p_h.
    """
    space = system.space
    e_h = project_qh(case.velocity, space).velocity - solution.u.velocity
    eps_h = project_pressure(case.pressure, space) - solution.p
    qh_u = project_qh(case.velocity, space).velocity
    ell, theta = consistency_vectors(system, case)

    lhs_vec = system.A @ e_h - system.B.T @ eps_h
    rhs_vec = ell - theta + system.S @ qh_u

    rng = np.random.default_rng(seed)
    out = np.empty(n_tests)
    for t in range(n_tests):
        v = rng.standard_normal(space.n_velocity)
        v /= np.linalg.norm(v)
        out[t] = abs(v @ lhs_vec - v @ rhs_vec)
    return out
