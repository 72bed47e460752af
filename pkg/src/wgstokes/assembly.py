"""Weak differential operators, projections, stabilizers, and assembly.

Everything is built cell by cell from scaled-monomial bases.  The weak
gradient of a weak function v = {v_0, v_b} is the tensor polynomial in
[P_{k-1}(T)]^{2x2} defined against test tensors q by

    (grad_w v, q)_T = -(v_0, div q)_T + <v_b, q n>_{dT},

and the weak divergence in P_{k-1}(T) is defined analogously against
scalar test polynomials.  With the velocity pair (P_k interior,
P_{k-1} edges) these choices make the projection/operator commutation
identities hold exactly, which the tests exercise.

All bilinear-form integrands are polynomials of degree at most 2k+2 on
cells and 2k+1 on edges, so assembly quadrature is exact.  Integrals of
user-supplied smooth data use the maximal supported rules instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import cell_basis, edge_basis, cell_geometry
from .mesh import Mesh
from .quadrature import MAX_EXACT_DEGREE, cell_quadrature, edge_quadrature
from .space import GammaSchedule, StabilizerKind, WeakFunction, WgSpace

__all__ = [
    "AssembledSystem",
    "AssemblyError",
    "assemble",
    "weak_gradient_local",
    "weak_divergence_local",
    "project_qh",
    "project_local",
    "project_pressure",
    "project_gradient_tensor",
    "stabilizer_energy",
    "v_norm",
    "eval_interior",
    "eval_pressure",
    "export_matrix",
    "cell_ops",
]

DATA_DEGREE = MAX_EXACT_DEGREE  # rule for non-polynomial (callback) data


class AssemblyError(RuntimeError):
    pass


@dataclass
class CellOps:
    """Per-cell operator bundle shared by assembly, norms and projections."""

    cell: int
    h_t: float
    area: float
    gram_k: np.ndarray          # (Dk, Dk) interior P_k Gram
    gram_km1: np.ndarray        # (Dm, Dm) P_{k-1} Gram (also the pressure Gram)
    grad_rhs: list[np.ndarray]  # 4 moment blocks (Dm, nloc), (i,j) = 2i+j
    div_rhs: np.ndarray         # (Dm, nloc) weak-divergence moments
    stiff: np.ndarray           # (nloc, nloc) (grad_w, grad_w)_T
    jump: np.ndarray            # (nloc, nloc) sum_e <Q_b v0 - v_b, ...>_e, unweighted
    stab_std: np.ndarray        # (nloc, nloc) h_T^{-1}-weighted jump (gamma applied later)
    stab_skel: np.ndarray       # (nloc, nloc) skeletal weights, alpha applied later
    broken_h1: np.ndarray       # (nloc, nloc) (grad v_0, grad v_0)_T on interior dofs
    edge_proj: list[np.ndarray]  # per local edge: trace projection (De, Dk)
    edge_gram: list[np.ndarray]  # per local edge: edge-basis Gram (De, De)
    int_moment: np.ndarray      # (Dk,) integrals of the interior basis over T


def _edge_slices(space: WgSpace):
    Dk, De = space.dim_cell, space.dim_edge
    nloc = 2 * Dk + 6 * De
    interior = [slice(i * Dk, (i + 1) * Dk) for i in range(2)]
    edges = [
        [slice(2 * Dk + (2 * j + i) * De, 2 * Dk + (2 * j + i + 1) * De) for i in range(2)]
        for j in range(3)
    ]
    return nloc, interior, edges


def cell_ops(space: WgSpace, cell: int) -> CellOps:
    """Compute the local operator bundle for one cell.

    Local DOF order: x then y interior coefficients, then per local
    edge the x and y edge coefficients (boundary edges included; global
    assembly drops them).
    """
    mesh = space.mesh
    k = space.k
    Dk, Dm, De = space.dim_cell, space.dim_pressure, space.dim_edge
    nloc, int_sl, edge_sl = _edge_slices(space)

    centroid, h_t = cell_geometry(mesh, cell)
    area = float(mesh.cell_areas[cell])
    if not area > 0:
        raise AssemblyError(f"cell {cell} is degenerate or mis-oriented (area {area:.3e})")

    bask = cell_basis(k)
    baskm1 = cell_basis(k - 1)
    base = edge_basis(k - 1)

    rule = cell_quadrature(2 * k + 2)
    pts, w = rule.map_to_cell(mesh, cell)
    phi, dphi = bask.eval(centroid, h_t, pts)
    chi, dchi = baskm1.eval(centroid, h_t, pts)

    gram_k = phi.T @ (w[:, None] * phi)
    gram_km1 = chi.T @ (w[:, None] * chi)
    int_moment = w @ phi
    # (phi_l, d_j chi_m)_T
    vol = [phi.T @ (w[:, None] * dchi[:, :, j]) for j in range(2)]

    grad_rhs = [np.zeros((Dm, nloc)) for _ in range(4)]
    div_rhs = np.zeros((Dm, nloc))
    for i in range(2):
        for j in range(2):
            grad_rhs[2 * i + j][:, int_sl[i]] = -vol[j].T
        div_rhs[:, int_sl[i]] = -vol[i].T

    erule = edge_quadrature(2 * k + 1)
    jump = np.zeros((nloc, nloc))
    stab_skel = np.zeros((nloc, nloc))
    edge_proj, edge_gram = [], []
    for j in range(3):
        e = mesh.cell_edges[cell, j]
        n = mesh.cell_edge_normals[cell, j]
        epts, ew = erule.map_to_edge(mesh, e)
        psi = base.eval(mesh, e, epts)
        phie, _ = bask.eval(centroid, h_t, epts)
        chie, _ = baskm1.eval(centroid, h_t, epts)

        g_e = psi.T @ (ew[:, None] * psi)             # (De, De)
        t_e = psi.T @ (ew[:, None] * phie)            # (De, Dk)
        m_e = chie.T @ (ew[:, None] * psi)            # (Dm, De)
        p_e = np.linalg.solve(g_e, t_e)               # trace projection
        edge_proj.append(p_e)
        edge_gram.append(g_e)

        for i in range(2):
            for jj in range(2):
                grad_rhs[2 * i + jj][:, edge_sl[j][i]] += n[jj] * m_e
            div_rhs[:, edge_sl[j][i]] += n[i] * m_e

        # <Q_b v_0 - v_b, Q_b u_0 - u_b>_e blocks, per component
        blk_ii = p_e.T @ g_e @ p_e
        blk_ie = -p_e.T @ g_e
        for i in range(2):
            ii, ee = int_sl[i], edge_sl[j][i]
            jump[ii, ii] += blk_ii
            jump[ii, ee] += blk_ie
            jump[ee, ii] += blk_ie.T
            jump[ee, ee] += g_e
        w_skel = mesh.edge_lengths[e] ** -1 * area / h_t**2 / 3.0  # alpha/(n+1), n = 2
        blk = np.zeros((nloc, nloc))
        for i in range(2):
            ii, ee = int_sl[i], edge_sl[j][i]
            blk[ii, ii] = blk_ii
            blk[ii, ee] = blk_ie
            blk[ee, ii] = blk_ie.T
            blk[ee, ee] = g_e
        stab_skel += w_skel * blk

    # (grad_w u, grad_w v)_T via the Gram-solved coefficients
    stiff = np.zeros((nloc, nloc))
    for r in grad_rhs:
        stiff += r.T @ np.linalg.solve(gram_km1, r)

    broken = np.zeros((nloc, nloc))
    kgrad = sum(dphi[:, :, j].T @ (w[:, None] * dphi[:, :, j]) for j in range(2))
    for i in range(2):
        broken[int_sl[i], int_sl[i]] = kgrad

    return CellOps(
        cell=cell,
        h_t=h_t,
        area=area,
        gram_k=gram_k,
        gram_km1=gram_km1,
        grad_rhs=grad_rhs,
        div_rhs=div_rhs,
        stiff=stiff,
        jump=jump,
        stab_std=jump / h_t,
        stab_skel=stab_skel,
        broken_h1=broken,
        edge_proj=edge_proj,
        edge_gram=edge_gram,
        int_moment=int_moment,
    )


def weak_gradient_local(space: WgSpace, cell: int) -> np.ndarray:
    """Matrix sending local velocity DOFs to grad_w coefficients.

    Rows are the 4 tensor components (i,j) = du_i/dx_j in the order
    (0,0), (0,1), (1,0), (1,1), each a P_{k-1} coefficient block.
    """
    ops = cell_ops(space, cell)
    return np.vstack([np.linalg.solve(ops.gram_km1, r) for r in ops.grad_rhs])


def weak_divergence_local(space: WgSpace, cell: int) -> np.ndarray:
    """Matrix sending local velocity DOFs to div_w coefficients in P_{k-1}."""
    ops = cell_ops(space, cell)
    return np.linalg.solve(ops.gram_km1, ops.div_rhs)


def local_velocity_dofs(space: WgSpace, cell: int) -> np.ndarray:
    """Global velocity DOF of each local DOF; -1 for boundary-edge slots."""
    mesh = space.mesh
    Dk, De = space.dim_cell, space.dim_edge
    idx = np.full(2 * Dk + 6 * De, -1, dtype=np.int64)
    idx[: 2 * Dk] = space.interior_dofs(cell)
    for j in range(3):
        dofs = space.edge_dofs(mesh.cell_edges[cell, j])
        if dofs is not None:
            idx[2 * Dk + 2 * j * De: 2 * Dk + 2 * (j + 1) * De] = dofs
    return idx


@dataclass
class AssembledSystem:
    """Sparse global forms of the WG scheme.

    ``A = A_grad + S`` is the full a_w matrix, ``M`` the b_w mass matrix
    (supported on the interior block), ``B`` the c_w divergence
    coupling, and ``S`` the stabilizer alone.  ``pressure_mass`` is the
    cellwise P_{k-1} Gram, used for pressure norms and mean-zero shifts.
    """

    space: WgSpace
    A: sp.csr_matrix
    M: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix
    A_grad: sp.csr_matrix
    pressure_mass: sp.csr_matrix
    gamma: GammaSchedule
    gamma_value: float
    stabilizer: StabilizerKind

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh


def _exact_symmetrize(mat: sp.csr_matrix) -> sp.csr_matrix:
    return (mat + mat.T) * 0.5


def assemble(
    mesh: Mesh,
    space: WgSpace,
    gamma: GammaSchedule = GammaSchedule(),
    stabilizer: StabilizerKind = StabilizerKind(),
) -> AssembledSystem:
    """Assemble A (= a_w), M (= b_w) and B (= c_w) over the WG space.

    gamma is evaluated at the mesh size h_max (the maximal cell
    diameter).  For the skeletal stabilizer gamma is not used; the
    weight is its alpha parameter.
    """
    if space.mesh is not mesh:
        raise ValueError("space was built for a different mesh")
    gamma_value = gamma.value(mesh.h_max)

    nv, npr = space.n_velocity, space.n_pressure
    Dk = space.dim_cell

    rows_a, cols_a, vals_grad, vals_stab = [], [], [], []
    rows_m, cols_m, vals_m = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    rows_p, cols_p, vals_p = [], [], []

    for c in range(mesh.num_cells):
        ops = cell_ops(space, c)
        gdof = local_velocity_dofs(space, c)
        keep = gdof >= 0
        kept = np.nonzero(keep)[0]
        gk = gdof[kept]

        if stabilizer.variant == "standard":
            s_loc = gamma_value * ops.stab_std
        else:
            s_loc = stabilizer.alpha * ops.stab_skel
        a_loc = 0.5 * (ops.stiff + ops.stiff.T)
        s_loc = 0.5 * (s_loc + s_loc.T)

        rr, cc = np.meshgrid(gk, gk, indexing="ij")
        rows_a.append(rr.ravel())
        cols_a.append(cc.ravel())
        vals_grad.append(a_loc[np.ix_(kept, kept)].ravel())
        vals_stab.append(s_loc[np.ix_(kept, kept)].ravel())

        idofs = space.interior_dofs(c)
        m_loc = np.zeros((2 * Dk, 2 * Dk))
        m_loc[:Dk, :Dk] = ops.gram_k
        m_loc[Dk:, Dk:] = ops.gram_k
        rr, cc = np.meshgrid(idofs, idofs, indexing="ij")
        rows_m.append(rr.ravel())
        cols_m.append(cc.ravel())
        vals_m.append((0.5 * (m_loc + m_loc.T)).ravel())

        pdofs = space.pressure_dofs(c)
        rr, cc = np.meshgrid(pdofs, gk, indexing="ij")
        rows_b.append(rr.ravel())
        cols_b.append(cc.ravel())
        vals_b.append(ops.div_rhs[:, kept].ravel())

        rr, cc = np.meshgrid(pdofs, pdofs, indexing="ij")
        rows_p.append(rr.ravel())
        cols_p.append(cc.ravel())
        vals_p.append(ops.gram_km1.ravel())

    def build(rows, cols, vals, shape):
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=shape,
        ).tocsr()

    a_grad = _exact_symmetrize(build(rows_a, cols_a, vals_grad, (nv, nv)))
    s_mat = _exact_symmetrize(build(rows_a, cols_a, vals_stab, (nv, nv)))
    m_mat = _exact_symmetrize(build(rows_m, cols_m, vals_m, (nv, nv)))
    b_mat = build(rows_b, cols_b, vals_b, (npr, nv))
    p_mass = build(rows_p, cols_p, vals_p, (npr, npr))

    return AssembledSystem(
        space=space,
        A=(a_grad + s_mat).tocsr(),
        M=m_mat,
        B=b_mat,
        S=s_mat,
        A_grad=a_grad,
        pressure_mass=p_mass,
        gamma=gamma,
        gamma_value=gamma_value,
        stabilizer=stabilizer,
    )


# ---------------------------------------------------------------------------
# projections


def project_qh(u, space: WgSpace) -> WeakFunction:
    """L2-project a vector field into the WG space (Q_0 and Q_b parts).

    ``u`` maps an (n, 2) array of points to an (n, 2) array of values.
    Boundary edges carry no DOFs, so the edge part is built only on
    interior edges; fields intended for the global space should vanish
    on the domain boundary.
    """
    mesh = space.mesh
    k = space.k
    vec = np.zeros(space.n_velocity)
    bask = cell_basis(k)
    rule = cell_quadrature(DATA_DEGREE)
    for c in range(mesh.num_cells):
        centroid, h_t = cell_geometry(mesh, c)
        pts, w = rule.map_to_cell(mesh, c)
        phi, _ = bask.eval(centroid, h_t, pts)
        gram = phi.T @ (w[:, None] * phi)
        vals = np.asarray(u(pts))
        dofs = space.interior_dofs(c)
        Dk = space.dim_cell
        for i in range(2):
            mom = phi.T @ (w * vals[:, i])
            vec[dofs[i * Dk:(i + 1) * Dk]] = np.linalg.solve(gram, mom)

    base = edge_basis(k - 1)
    erule = edge_quadrature(DATA_DEGREE)
    for e in range(mesh.num_edges):
        dofs = space.edge_dofs(e)
        if dofs is None:
            continue
        pts, w = erule.map_to_edge(mesh, e)
        psi = base.eval(mesh, e, pts)
        gram = psi.T @ (w[:, None] * psi)
        vals = np.asarray(u(pts))
        De = space.dim_edge
        for i in range(2):
            mom = psi.T @ (w * vals[:, i])
            vec[dofs[i * De:(i + 1) * De]] = np.linalg.solve(gram, mom)
    return WeakFunction(space, vec)


def project_local(u, space: WgSpace, cell: int) -> np.ndarray:
    """Local Q_h projection including all three edges of the cell.

    Unlike :func:`project_qh` this keeps boundary-edge coefficients, so
    it realizes the element-level projection the commutation identities
    are stated for.
    """
    mesh = space.mesh
    k = space.k
    Dk, De = space.dim_cell, space.dim_edge
    nloc, int_sl, edge_sl = _edge_slices(space)
    out = np.zeros(nloc)

    centroid, h_t = cell_geometry(mesh, cell)
    rule = cell_quadrature(DATA_DEGREE)
    pts, w = rule.map_to_cell(mesh, cell)
    phi, _ = cell_basis(k).eval(centroid, h_t, pts)
    gram = phi.T @ (w[:, None] * phi)
    vals = np.asarray(u(pts))
    for i in range(2):
        out[int_sl[i]] = np.linalg.solve(gram, phi.T @ (w * vals[:, i]))

    base = edge_basis(k - 1)
    erule = edge_quadrature(DATA_DEGREE)
    for j in range(3):
        e = mesh.cell_edges[cell, j]
        pts, w = erule.map_to_edge(mesh, e)
        psi = base.eval(mesh, e, pts)
        egram = psi.T @ (w[:, None] * psi)
        vals = np.asarray(u(pts))
        for i in range(2):
            out[edge_sl[j][i]] = np.linalg.solve(egram, psi.T @ (w * vals[:, i]))
    return out


def project_pressure(p, space: WgSpace) -> np.ndarray:
    """Cellwise L2 projection of a scalar field onto P_{k-1}."""
    mesh = space.mesh
    vec = np.zeros(space.n_pressure)
    baskm1 = cell_basis(space.k - 1)
    rule = cell_quadrature(DATA_DEGREE)
    for c in range(mesh.num_cells):
        centroid, h_t = cell_geometry(mesh, c)
        pts, w = rule.map_to_cell(mesh, c)
        chi, _ = baskm1.eval(centroid, h_t, pts)
        gram = chi.T @ (w[:, None] * chi)
        vals = np.asarray(p(pts))
        vec[space.pressure_dofs(c)] = np.linalg.solve(gram, chi.T @ (w * vals))
    return vec


def project_gradient_tensor(grad, space: WgSpace, cell: int) -> np.ndarray:
    """Project a 2x2 tensor field onto [P_{k-1}(T)]^{2x2} on one cell.

    ``grad`` maps (n, 2) points to (n, 2, 2) tensors.  Returns 4 stacked
    coefficient blocks ordered like the weak-gradient components.
    """
    mesh = space.mesh
    centroid, h_t = cell_geometry(mesh, cell)
    rule = cell_quadrature(DATA_DEGREE)
    pts, w = rule.map_to_cell(mesh, cell)
    chi, _ = cell_basis(space.k - 1).eval(centroid, h_t, pts)
    gram = chi.T @ (w[:, None] * chi)
    vals = np.asarray(grad(pts))
    out = np.empty((4, space.dim_pressure))
    for i in range(2):
        for j in range(2):
            out[2 * i + j] = np.linalg.solve(gram, chi.T @ (w * vals[:, i, j]))
    return out.ravel()


# ---------------------------------------------------------------------------
# norms and energies


def stabilizer_energy(w: WeakFunction, system: AssembledSystem) -> float:
    """s(w, w) for the system's stabilizer; nonnegative quadratic form."""
    return float(w.velocity @ (system.S @ w.velocity))


def v_norm(w: WeakFunction) -> float:
    """Discrete V-norm: broken H1 seminorm plus h_T^{-1}-weighted jumps."""
    space = w.space
    mesh = space.mesh
    total = 0.0
    for c in range(mesh.num_cells):
        ops = cell_ops(space, c)
        loc = _gather_local(w, space, c)
        total += loc @ (ops.broken_h1 @ loc) + loc @ (ops.stab_std @ loc)
    return float(np.sqrt(max(total, 0.0)))


def _gather_local(w: WeakFunction, space: WgSpace, cell: int) -> np.ndarray:
    gdof = local_velocity_dofs(space, cell)
    loc = np.zeros(gdof.shape[0])
    mask = gdof >= 0
    loc[mask] = w.velocity[gdof[mask]]
    return loc


# ---------------------------------------------------------------------------
# evaluation and export


def eval_interior(w: WeakFunction, cells: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate the interior polynomial part v_0 at points in given cells."""
    space = w.space
    mesh = space.mesh
    Dk = space.dim_cell
    bask = cell_basis(space.k)
    out = np.empty((len(pts), 2))
    for c in np.unique(cells):
        sel = cells == c
        centroid, h_t = cell_geometry(mesh, int(c))
        phi, _ = bask.eval(centroid, h_t, pts[sel])
        dofs = space.interior_dofs(int(c))
        out[sel, 0] = phi @ w.velocity[dofs[:Dk]]
        out[sel, 1] = phi @ w.velocity[dofs[Dk:]]
    return out


def eval_pressure(space: WgSpace, p: np.ndarray, cells: np.ndarray, pts: np.ndarray) -> np.ndarray:
    baskm1 = cell_basis(space.k - 1)
    mesh = space.mesh
    out = np.empty(len(pts))
    for c in np.unique(cells):
        sel = cells == c
        centroid, h_t = cell_geometry(mesh, int(c))
        chi, _ = baskm1.eval(centroid, h_t, pts[sel])
        out[sel] = chi @ p[space.pressure_dofs(int(c))]
    return out


def export_matrix(mat, path) -> None:
    """Write a sparse matrix as `row col value` triplets, 17 digits."""
    coo = sp.coo_matrix(mat)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{r} {c} {v:.17g}\n")
