"""WG space layout: DOF maps, weak functions, stabilizer configuration.

A degree-k velocity space carries, per cell, 2 dim(P_k) interior
coefficients (x-component block then y-component block) and, per
interior edge, 2 dim(P_{k-1}(e)) edge coefficients.  Boundary edges
carry no unknowns (homogeneous Dirichlet data).  Pressures are cellwise
P_{k-1} coefficients with the zero-mean constraint handled at solve
time.  Interior velocity DOFs come first globally, then edge DOFs, so
the mass matrix support is a leading block.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import log

import numpy as np

from .basis import dim_pk
from .mesh import Mesh

__all__ = [
    "WgSpace",
    "WeakFunction",
    "GammaSchedule",
    "StabilizerKind",
    "build_space",
]

MAX_DEGREE = 3


@dataclass(frozen=True)
class WgSpace:
    """Global DOF layout of the degree-k WG velocity/pressure pair."""

    mesh: Mesh
    k: int
    dim_cell: int       # dim P_k(T), per velocity component
    dim_edge: int       # dim P_{k-1}(e), per velocity component
    dim_pressure: int   # dim P_{k-1}(T)
    interior_base: np.ndarray  # (C,) first interior DOF of each cell
    edge_base: np.ndarray      # (E,) first edge DOF, -1 on boundary edges
    pressure_base: np.ndarray  # (C,)
    n_interior: int
    n_edge: int
    n_pressure: int

    @property
    def n_velocity(self) -> int:
        return self.n_interior + self.n_edge

    def interior_dofs(self, cell: int) -> np.ndarray:
        base = self.interior_base[cell]
        return np.arange(base, base + 2 * self.dim_cell)

    def edge_dofs(self, edge: int) -> np.ndarray | None:
        base = self.edge_base[edge]
        if base < 0:
            return None
        return np.arange(base, base + 2 * self.dim_edge)

    def pressure_dofs(self, cell: int) -> np.ndarray:
        base = self.pressure_base[cell]
        return np.arange(base, base + self.dim_pressure)


def build_space(mesh: Mesh, k: int) -> WgSpace:
    """Construct the DOF maps for velocity degree k (1 <= k <= 3)."""
    if not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"k must be in 1..{MAX_DEGREE}, got {k}")
    dim_cell = dim_pk(k)
    dim_edge = k  # dim P_{k-1} on an edge
    dim_pressure = dim_pk(k - 1)

    C, E = mesh.num_cells, mesh.num_edges
    interior_base = 2 * dim_cell * np.arange(C, dtype=np.int64)
    n_interior = 2 * dim_cell * C

    edge_base = np.full(E, -1, dtype=np.int64)
    nxt = n_interior
    for e in range(E):
        if not mesh.edge_boundary[e]:
            edge_base[e] = nxt
            nxt += 2 * dim_edge
    n_edge = nxt - n_interior

    pressure_base = dim_pressure * np.arange(C, dtype=np.int64)
    return WgSpace(
        mesh=mesh,
        k=k,
        dim_cell=dim_cell,
        dim_edge=dim_edge,
        dim_pressure=dim_pressure,
        interior_base=interior_base,
        edge_base=edge_base,
        pressure_base=pressure_base,
        n_interior=n_interior,
        n_edge=n_edge,
        n_pressure=dim_pressure * C,
    )


@dataclass
class WeakFunction:
    """Coefficient vector over the velocity DOFs, optionally with pressure."""

    space: WgSpace
    velocity: np.ndarray
    pressure: np.ndarray | None = None

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.velocity.shape != (self.space.n_velocity,):
            raise ValueError(
                f"velocity vector has shape {self.velocity.shape}, "
                f"expected ({self.space.n_velocity},)"
            )
        if self.pressure is not None:
            self.pressure = np.asarray(self.pressure, dtype=float)
            if self.pressure.shape != (self.space.n_pressure,):
                raise ValueError("pressure vector length mismatch")

    @property
    def interior(self) -> np.ndarray:
        return self.velocity[: self.space.n_interior]

    @property
    def edge(self) -> np.ndarray:
        return self.velocity[self.space.n_interior:]


@dataclass(frozen=True)
class GammaSchedule:
    """Stabilizer weight gamma as a function of the mesh size.

    kinds: "constant" (gamma = parameter), "power" (gamma = h^parameter)
    and "log" (gamma = -1/log h).  The power and log kinds vanish as
    h -> 0, which is what the asymptotic lower-bound property requires.
    """

    kind: str = "constant"
    parameter: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "power", "log"):
            raise ValueError(f"unknown gamma kind {self.kind!r}")
        if self.kind == "constant" and self.parameter <= 0:
            raise ValueError("constant gamma must be positive")

    def value(self, h: float) -> float:
        if h <= 0:
            raise ValueError(f"mesh size must be positive, got {h}")
        if self.kind == "constant":
            return self.parameter
        if h >= 1:
            raise ValueError(f"h-dependent gamma needs h in (0,1), got {h}")
        if self.kind == "power":
            return h ** self.parameter
        return -1.0 / log(h)

    @property
    def vanishing(self) -> bool:
        """True when gamma(h) -> 0 as h -> 0."""
        return self.kind == "log" or (self.kind == "power" and self.parameter > 0)

    def label(self) -> str:
        if self.kind == "constant":
            return f"const:{self.parameter:g}"
        if self.kind == "power":
            return f"pow:{self.parameter:g}"
        return "log"

    @staticmethod
    def parse(text: str) -> "GammaSchedule":
        """Parse the CLI grammar const[:c] | pow:<eps> | log."""
        parts = text.split(":")
        if parts[0] == "const":
            c = float(parts[1]) if len(parts) > 1 else 1.0
            return GammaSchedule("constant", c)
        if parts[0] == "pow":
            if len(parts) != 2:
                raise ValueError("pow gamma needs an exponent, e.g. pow:0.1")
            return GammaSchedule("power", float(parts[1]))
        if parts[0] == "log" and len(parts) == 1:
            return GammaSchedule("log", 0.0)
        raise ValueError(f"cannot parse gamma spec {text!r}")


@dataclass(frozen=True)
class StabilizerKind:
    """Stabilizer variant: the gamma(h)-weighted form or the skeletal one.

    The standard form weighs each cell-boundary term by gamma(h)/h_T.
    The skeletal form weighs each (cell, face) term by
    alpha/(n+1) * h_T^{-2} |F|^{-1} |T| with n the spatial dimension,
    and ignores gamma.
    """

    variant: str = "standard"
    alpha: float = 0.0

    def __post_init__(self):
        if self.variant not in ("standard", "skeletal"):
            raise ValueError(f"unknown stabilizer variant {self.variant!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def label(self) -> str:
        if self.variant == "standard":
            return "standard"
        return f"skeletal:{self.alpha:g}"

    @staticmethod
    def parse(text: str) -> "StabilizerKind":
        parts = text.split(":")
        if parts[0] == "standard" and len(parts) == 1:
            return StabilizerKind("standard")
        if parts[0] == "skeletal":
            if len(parts) != 2:
                raise ValueError("skeletal stabilizer needs alpha, e.g. skeletal:0.5")
            return StabilizerKind("skeletal", float(parts[1]))
        raise ValueError(f"cannot parse stabilizer spec {text!r}")
