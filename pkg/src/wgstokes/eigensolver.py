"""Constrained saddle-pencil eigensolver via reduction to interior DOFs.

The discrete problem couples velocity stiffness A, the divergence
constraint B and a mass matrix M supported only on interior velocity
DOFs.  Its finite eigenvalues are those of the pencil

    [[A, B^T], [B, 0]] z = lambda [[M, 0], [0, 0]] z.

Because M vanishes on edge and pressure blocks, the problem condenses
exactly onto the interior unknowns.  The constant-pressure mode is
fixed by pinning one pressure DOF (a redundant constraint row).

Two equivalent reductions are used:

* k = 1: direct Schur complement S = A00 - C K^{-1} C^T of the pinned
  saddle matrix, giving an SPD pencil (S, M00).  A singular pivot K
  here indicates broken stabilization and raises.
* k >= 2: K is structurally singular (continuous piecewise P_{k-1}
  pressures have no edge-velocity coupling), so the reduction goes
  through the inverse instead: with W00 the interior block of H^{-1},
  the pencil (M00 W00 M00, M00) carries theta = 1/lambda.  This needs
  only saddle solves and is what the sparse path uses for every k.

Large problems run ARPACK shift-invert at sigma = 0 with OP applied
through a sparse LU of the saddle matrix (ARPACK mode 3, which allows
the semidefinite mass).  A fixed start vector keeps results
bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledSystem

__all__ = [
    "EigenResult",
    "ReducedPencil",
    "SolverError",
    "RankDeficiencyError",
    "ConvergenceError",
    "reduce_pencil",
    "solve_smallest",
]

DENSE_STRATEGY_LIMIT = 20_000
AUTO_DENSE_LIMIT = 1_500


class SolverError(RuntimeError):
    pass


class RankDeficiencyError(SolverError):
    """A pivot or saddle factorization is singular."""


class ConvergenceError(SolverError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass
class EigenResult:
    """Ascending finite eigenpairs, b_w-normalized.

    ``vectors`` holds velocity coefficient columns (interior + edge),
    ``pressures`` the multiplier columns shifted to zero mean, and
    ``residuals`` the relative full-system residuals
    ||A u + B^T p - lambda M u|| / lambda.
    """

    values: np.ndarray
    vectors: np.ndarray
    pressures: np.ndarray
    residuals: np.ndarray
    constraint_residuals: np.ndarray

    @property
    def m(self) -> int:
        return len(self.values)


@dataclass
class ReducedPencil:
    """Reduction of the saddle pencil onto the interior velocity DOFs."""

    system: AssembledSystem
    pin: int
    n0: int
    A00: sp.csr_matrix
    C: sp.csr_matrix        # (n0, nb + np - 1) coupling [A_0b, B_0^T]
    K: sp.csr_matrix        # [[A_bb, B_b^T], [B_b, 0]] with the pin removed
    M00: sp.csr_matrix

    @property
    def n_eliminated(self) -> int:
        return self.K.shape[0]

    @cached_property
    def saddle(self) -> sp.csc_matrix:
        """The pinned saddle matrix H = [[A00, C], [C^T, K]]."""
        if self.n_eliminated == 0:
            return self.A00.tocsc()
        return sp.bmat([[self.A00, self.C], [self.C.T, self.K]], format="csc")

    @cached_property
    def _saddle_lu(self):
        try:
            return spla.splu(self.saddle)
        except RuntimeError as exc:
            raise RankDeficiencyError(f"saddle factorization failed: {exc}") from exc

    @cached_property
    def _k_lu(self):
        if self.n_eliminated == 0:
            return None
        try:
            return spla.splu(self.K.tocsc())
        except RuntimeError as exc:
            raise RankDeficiencyError(
                f"Schur pivot block is singular ({exc}); "
                "stabilization or inf-sup compatibility is broken"
            ) from exc

    def schur_dense(self) -> np.ndarray:
        """S = A00 - C K^{-1} C^T (requires an invertible pivot; k = 1)."""
        s = self.A00.toarray()
        if self.n_eliminated:
            kinv_ct = self._k_lu.solve(self.C.T.toarray())
            s = s - self.C @ kinv_ct
        return 0.5 * (s + s.T)

    def interior_inverse_dense(self) -> np.ndarray:
        """W00, the interior block of H^{-1} (theta-pencil reduction)."""
        rhs = np.zeros((self.saddle.shape[0], self.n0))
        rhs[: self.n0] = np.eye(self.n0)
        w00 = self._saddle_lu.solve(rhs)[: self.n0]
        return 0.5 * (w00 + w00.T)

    def opinv_matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply W00 (= S^{-1} when the pivot is invertible)."""
        rhs = np.zeros(self.saddle.shape[0])
        rhs[: self.n0] = x
        return self._saddle_lu.solve(rhs)[: self.n0]

    def recover(self, vals: np.ndarray, u0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lift reduced eigenvectors to full velocity/pressure columns.

        z = lambda H^{-1} [M00 u0; 0] reproduces the interior part and
        fills in edge velocities and the pressure multiplier; it also
        purifies roundoff components outside the constraint manifold.
        The pinned pressure coefficient is reinstated as zero.
        """
        u0 = np.atleast_2d(u0.T).T
        space = self.system.space
        nv, npr = space.n_velocity, space.n_pressure
        m = u0.shape[1]
        nb = nv - self.n0
        vel = np.zeros((nv, m))
        pres = np.zeros((npr, m))
        keep = np.arange(npr) != self.pin
        rhs = np.zeros((self.saddle.shape[0], m))
        rhs[: self.n0] = self.M00 @ u0
        z = self._saddle_lu.solve(rhs) * vals[None, :]
        vel[: self.n0] = z[: self.n0]
        if self.n_eliminated:
            vel[self.n0:] = z[self.n0: self.n0 + nb]
            pres[keep] = z[self.n0 + nb:]
        return vel, pres


def reduce_pencil(system: AssembledSystem, pin: int = 0) -> ReducedPencil:
    """Partition the assembled system for exact elimination.

    ``pin`` is the pressure DOF fixed to remove the constant-pressure
    null mode (DOF 0 is the constant mode of cell 0).
    """
    space = system.space
    n0 = space.n_interior
    A = system.A.tocsr()
    B = system.B.tocsr()

    keep = np.arange(space.n_pressure) != pin
    b_kept = B[keep]
    a00 = A[:n0, :n0]
    a0b = A[:n0, n0:]
    abb = A[n0:, n0:]
    b0 = b_kept[:, :n0]
    bb = b_kept[:, n0:]

    c = sp.hstack([a0b, b0.T], format="csr") if b_kept.shape[0] + abb.shape[0] else a0b
    npk = b_kept.shape[0]
    k = sp.bmat(
        [[abb, bb.T], [bb, sp.csr_matrix((npk, npk))]],
        format="csr",
    )

    return ReducedPencil(
        system=system,
        pin=pin,
        n0=n0,
        A00=a00.tocsr(),
        C=c.tocsr(),
        K=k.tocsr(),
        M00=system.M[:n0, :n0].tocsr(),
    )


def _zero_mean_pressure(system: AssembledSystem, pres: np.ndarray) -> np.ndarray:
    """Shift each pressure column to zero mean over the domain."""
    space = system.space
    area = float(np.abs(system.mesh.cell_areas).sum())
    const_rows = space.pressure_base  # constant-mode DOF of each cell
    integrals = (system.pressure_mass @ pres)[const_rows].sum(axis=0)
    out = pres.copy()
    out[const_rows] -= integrals / area
    return out


def _no_matvec(x):
    raise NotImplementedError(
        "the condensed stiffness is only defined implicitly; "
        "ARPACK shift-invert (mode 3) must not request its action"
    )


def solve_smallest(
    system: AssembledSystem,
    m: int,
    tol: float = 1e-9,
    strategy: str = "auto",
    pin: int = 0,
) -> EigenResult:
    """Return the m smallest finite eigenpairs of the constrained pencil.

    strategy "dense" condenses explicitly and calls a direct symmetric
    solver (permitted up to reduced dimension 20000); "sparse" runs
    ARPACK shift-invert with sigma = 0; "auto" picks by size.
    Eigenvectors are b_w-orthonormal with the sign fixed by the
    largest-magnitude interior coefficient.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    red = reduce_pencil(system, pin=pin)
    n0 = red.n0
    if m > n0:
        raise ValueError(f"m = {m} exceeds the reduced dimension {n0}")

    if strategy == "auto":
        strategy = "dense" if n0 <= AUTO_DENSE_LIMIT or m >= n0 - 1 else "sparse"
    if strategy not in ("dense", "sparse"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "dense" and n0 > DENSE_STRATEGY_LIMIT:
        raise ValueError(
            f"dense strategy limited to reduced dimension {DENSE_STRATEGY_LIMIT}, got {n0}"
        )

    if strategy == "dense":
        if system.space.k == 1:
            s = red.schur_dense()
            m00 = red.M00.toarray()
            vals, vecs = sla.eigh(s, m00, subset_by_index=[0, m - 1])
        else:
            # theta-pencil: theta = 1/lambda, largest thetas wanted
            w00 = red.interior_inverse_dense()
            m00 = red.M00.toarray()
            s_hat = m00 @ w00 @ m00
            thetas, tvecs = sla.eigh(0.5 * (s_hat + s_hat.T), m00)
            if thetas[-m] <= 1e-14 * max(thetas[-1], 1.0):
                raise SolverError(
                    f"fewer than m = {m} finite eigenvalues in the reduced pencil"
                )
            vals = 1.0 / thetas[-1: -m - 1: -1]
            vecs = tvecs[:, -1: -m - 1: -1]
    else:
        opinv = spla.LinearOperator((n0, n0), matvec=red.opinv_matvec, dtype=float)
        a_op = spla.LinearOperator((n0, n0), matvec=_no_matvec, dtype=float)
        v0 = np.random.default_rng(0).standard_normal(n0)  # fixed seed: reproducible
        try:
            vals, vecs = spla.eigsh(
                a_op,
                k=m,
                M=red.M00,
                sigma=0.0,
                which="LM",
                OPinv=opinv,
                v0=v0,
                tol=tol,
            )
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"ARPACK converged only {len(exc.eigenvalues)}/{m} eigenpairs",
                residuals=exc.eigenvalues,
            ) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]

    vals = np.asarray(vals, dtype=float)
    vel, pres = red.recover(vals, vecs)

    # b_w normalization and deterministic sign
    for j in range(m):
        scale = float(vel[:, j] @ (system.M @ vel[:, j]))
        vel[:, j] /= np.sqrt(scale)
        pres[:, j] /= np.sqrt(scale)
        i_star = int(np.argmax(np.abs(vel[:n0, j])))
        if vel[i_star, j] < 0:
            vel[:, j] = -vel[:, j]
            pres[:, j] = -pres[:, j]

    pres = _zero_mean_pressure(system, pres)

    residuals = np.empty(m)
    constraint = np.empty(m)
    for j in range(m):
        r = system.A @ vel[:, j] + system.B.T @ pres[:, j] - vals[j] * (system.M @ vel[:, j])
        residuals[j] = np.linalg.norm(r) / vals[j]
        constraint[j] = np.linalg.norm(system.B @ vel[:, j])

    return EigenResult(
        values=vals,
        vectors=vel,
        pressures=pres,
        residuals=residuals,
        constraint_residuals=constraint,
    )
