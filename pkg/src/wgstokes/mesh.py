"""Uniform triangulations of the unit square and the L-shaped domain.

Besides connectivity the mesh stores every geometric quantity the
assembly needs: signed cell areas, cell diameters (longest edge), edge
lengths, and outward unit normals per (cell, local edge) pair.  Meshes
are treated as immutable after construction; refinement returns a new
mesh.  Vertex, edge and cell indices are dense and deterministic
(lexicographic by grid coordinates for the built-in domains) so DOF
orderings and output files are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Vertex",
    "Edge",
    "Cell",
    "Mesh",
    "mesh_from_arrays",
    "build_unit_square_mesh",
    "build_l_shape_mesh",
    "uniform_refine",
    "validate",
    "write_mesh",
]


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    """Mesh edge with per-adjacent-cell outward normals."""

    id: int
    endpoints: tuple[int, int]
    cells: tuple[int, ...]          # one id on the boundary, two inside
    boundary: bool
    length: float
    normals: tuple[tuple[float, float], ...]  # aligned with `cells`


@dataclass(frozen=True)
class Cell:
    id: int
    vertices: tuple[int, int, int]  # counterclockwise
    edges: tuple[int, int, int]     # edge j joins local vertices j, j+1
    area: float                     # signed; positive for CCW cells
    diameter: float                 # longest edge


@dataclass
class Mesh:
    """Triangle mesh in array-of-struct layout.

    ``cell_edges[c, j]`` is the edge joining local vertices ``j`` and
    ``(j+1) % 3`` of cell ``c``; ``cell_edge_normals[c, j]`` is the unit
    normal on that edge pointing out of cell ``c``.  ``h_ref`` records
    the nominal grid spacing 1/n of the built-in domains (the "h" the
    convergence tables are indexed by); the true maximal cell diameter
    is ``h_max``.
    """

    vertex_coords: np.ndarray       # (V, 2)
    cell_vertices: np.ndarray       # (C, 3) int, CCW
    cell_edges: np.ndarray          # (C, 3) int
    edge_vertices: np.ndarray       # (E, 2) int
    edge_cells: np.ndarray          # (E, 2) int, -1 where absent
    edge_boundary: np.ndarray       # (E,) bool
    edge_lengths: np.ndarray        # (E,)
    cell_areas: np.ndarray          # (C,) signed
    cell_diameters: np.ndarray      # (C,)
    cell_edge_normals: np.ndarray   # (C, 3, 2)
    domain: str = "custom"
    h_ref: float | None = None

    @property
    def num_vertices(self) -> int:
        return self.vertex_coords.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cell_vertices.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_vertices.shape[0]

    @property
    def h_max(self) -> float:
        return float(self.cell_diameters.max())

    @property
    def total_area(self) -> float:
        return float(self.cell_areas.sum())

    def cell_centroids(self) -> np.ndarray:
        return self.vertex_coords[self.cell_vertices].mean(axis=1)

    @cached_property
    def vertices(self) -> tuple[Vertex, ...]:
        return tuple(
            Vertex(i, float(x), float(y))
            for i, (x, y) in enumerate(self.vertex_coords)
        )

    @cached_property
    def edges(self) -> tuple[Edge, ...]:
        out = []
        for e in range(self.num_edges):
            cells = tuple(int(c) for c in self.edge_cells[e] if c >= 0)
            normals = []
            for c in cells:
                j = int(np.nonzero(self.cell_edges[c] == e)[0][0])
                n = self.cell_edge_normals[c, j]
                normals.append((float(n[0]), float(n[1])))
            out.append(
                Edge(
                    id=e,
                    endpoints=(int(self.edge_vertices[e, 0]), int(self.edge_vertices[e, 1])),
                    cells=cells,
                    boundary=bool(self.edge_boundary[e]),
                    length=float(self.edge_lengths[e]),
                    normals=tuple(normals),
                )
            )
        return tuple(out)

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        return tuple(
            Cell(
                id=c,
                vertices=tuple(int(v) for v in self.cell_vertices[c]),
                edges=tuple(int(e) for e in self.cell_edges[c]),
                area=float(self.cell_areas[c]),
                diameter=float(self.cell_diameters[c]),
            )
            for c in range(self.num_cells)
        )


def _signed_areas(coords: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p0 = coords[tris[:, 0]]
    p1 = coords[tris[:, 1]]
    p2 = coords[tris[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


def mesh_from_arrays(
    coords: np.ndarray,
    tris: np.ndarray,
    domain: str = "custom",
    h_ref: float | None = None,
) -> Mesh:
    """Assemble the full mesh data structure from vertices and triangles.

    Edges are discovered in cell order (local edges 0,1,2 within each
    cell), which fixes a deterministic edge numbering.  No validity
    checks are performed here; use :func:`validate`.
    """
    coords = np.asarray(coords, dtype=float)
    tris = np.asarray(tris, dtype=np.int64)
    ncells = tris.shape[0]

    edge_index: dict[tuple[int, int], int] = {}
    edge_verts: list[tuple[int, int]] = []
    cell_edges = np.empty((ncells, 3), dtype=np.int64)
    edge_cells_list: list[list[int]] = []
    for c in range(ncells):
        for j in range(3):
            a = int(tris[c, j])
            b = int(tris[c, (j + 1) % 3])
            key = (a, b) if a < b else (b, a)
            e = edge_index.get(key)
            if e is None:
                e = len(edge_verts)
                edge_index[key] = e
                edge_verts.append((a, b))
                edge_cells_list.append([])
            cell_edges[c, j] = e
            edge_cells_list[e].append(c)

    nedges = len(edge_verts)
    edge_vertices = np.array(edge_verts, dtype=np.int64)
    edge_cells = np.full((nedges, 2), -1, dtype=np.int64)
    for e, cs in enumerate(edge_cells_list):
        for s, c in enumerate(cs[:2]):
            edge_cells[e, s] = c
    edge_boundary = np.array([len(cs) == 1 for cs in edge_cells_list])

    dv = coords[edge_vertices[:, 1]] - coords[edge_vertices[:, 0]]
    edge_lengths = np.hypot(dv[:, 0], dv[:, 1])

    cell_areas = _signed_areas(coords, tris)
    cell_diameters = edge_lengths[cell_edges].max(axis=1)

    # Outward normal of local edge j for a CCW cell: rotate the directed
    # edge vector by -90 degrees.
    normals = np.empty((ncells, 3, 2))
    for j in range(3):
        a = tris[:, j]
        b = tris[:, (j + 1) % 3]
        t = coords[b] - coords[a]
        ln = np.hypot(t[:, 0], t[:, 1])
        normals[:, j, 0] = t[:, 1] / ln
        normals[:, j, 1] = -t[:, 0] / ln

    return Mesh(
        vertex_coords=coords,
        cell_vertices=tris,
        cell_edges=cell_edges,
        edge_vertices=edge_vertices,
        edge_cells=edge_cells,
        edge_boundary=edge_boundary,
        edge_lengths=edge_lengths,
        cell_areas=cell_areas,
        cell_diameters=cell_diameters,
        cell_edge_normals=normals,
        domain=domain,
        h_ref=h_ref,
    )


def _grid_triangles(square_ids: list[tuple[int, int, int, int]]) -> np.ndarray:
    """Split grid squares (bl, br, tr, tl) along the bl->tr diagonal."""
    tris = []
    for bl, br, tr, tl in square_ids:
        tris.append((bl, br, tr))
        tris.append((bl, tr, tl))
    return np.array(tris, dtype=np.int64)


def build_unit_square_mesh(n: int) -> Mesh:
    """Uniform triangulation of (0,1)^2 with n subdivisions per side.

    Every grid square is split along the bottom-left -> top-right
    diagonal, giving 2 n^2 congruent cells with diameter sqrt(2)/n.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    xs = np.arange(n + 1) / n
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    coords = np.column_stack([gx.ravel(), gy.ravel()])

    squares = []
    for iy in range(n):
        for ix in range(n):
            bl = iy * (n + 1) + ix
            squares.append((bl, bl + 1, bl + n + 2, bl + n + 1))
    tris = _grid_triangles(squares)
    return mesh_from_arrays(coords, tris, domain="unit-square", h_ref=1.0 / n)


def build_l_shape_mesh(n: int) -> Mesh:
    """Uniform triangulation of (-1,1)^2 minus [0,1]^2.

    ``n`` counts subdivisions per unit side, so the reentrant corner
    (0,0) is always a mesh vertex and the nominal spacing is 1/n.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")

    vid: dict[tuple[int, int], int] = {}
    coords_list = []
    for iy in range(-n, n + 1):
        for ix in range(-n, n + 1):
            if ix > 0 and iy > 0:
                continue
            vid[(ix, iy)] = len(coords_list)
            coords_list.append((ix / n, iy / n))
    coords = np.array(coords_list)

    squares = []
    for iy in range(-n, n):
        for ix in range(-n, n):
            if ix >= 0 and iy >= 0:
                continue
            squares.append(
                (
                    vid[(ix, iy)],
                    vid[(ix + 1, iy)],
                    vid[(ix + 1, iy + 1)],
                    vid[(ix, iy + 1)],
                )
            )
    tris = _grid_triangles(squares)
    return mesh_from_arrays(coords, tris, domain="l-shape", h_ref=1.0 / n)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into 4 congruent children by edge midpoints.

    New vertices are numbered old-vertex-count + edge id, and the four
    children of cell c occupy slots 4c .. 4c+3, so refinement is fully
    deterministic.  All diameters halve exactly (up to roundoff).
    """
    V = mesh.num_vertices
    mids = 0.5 * (
        mesh.vertex_coords[mesh.edge_vertices[:, 0]]
        + mesh.vertex_coords[mesh.edge_vertices[:, 1]]
    )
    coords = np.vstack([mesh.vertex_coords, mids])

    tris = np.empty((4 * mesh.num_cells, 3), dtype=np.int64)
    for c in range(mesh.num_cells):
        v0, v1, v2 = mesh.cell_vertices[c]
        m01 = V + mesh.cell_edges[c, 0]
        m12 = V + mesh.cell_edges[c, 1]
        m20 = V + mesh.cell_edges[c, 2]
        tris[4 * c + 0] = (v0, m01, m20)
        tris[4 * c + 1] = (v1, m12, m01)
        tris[4 * c + 2] = (v2, m20, m12)
        tris[4 * c + 3] = (m01, m12, m20)

    h_ref = None if mesh.h_ref is None else 0.5 * mesh.h_ref
    return mesh_from_arrays(coords, tris, domain=mesh.domain, h_ref=h_ref)


def validate(mesh: Mesh) -> list[str]:
    """Check mesh invariants and return a list of violations (empty if OK).

    Covers orientation, adjacency, the Euler relation, outwardness of
    normals, and consistency of the stored measures.  Never raises.
    """
    problems: list[str] = []
    coords = mesh.vertex_coords

    if not np.all(np.isfinite(coords)):
        problems.append("non-finite vertex coordinates")

    # Orientation: positive signed area for every cell.
    areas = _signed_areas(coords, mesh.cell_vertices)
    for c in np.nonzero(areas <= 0)[0]:
        problems.append(f"cell {c}: non-positive signed area {areas[c]:.3e}")

    # Stored measures vs recomputed ones.
    if not np.allclose(areas, mesh.cell_areas, rtol=1e-13, atol=1e-300):
        problems.append("stored cell areas inconsistent with coordinates")
    dv = coords[mesh.edge_vertices[:, 1]] - coords[mesh.edge_vertices[:, 0]]
    lengths = np.hypot(dv[:, 0], dv[:, 1])
    bad = np.nonzero(
        np.abs(lengths - mesh.edge_lengths) > 1e-14 * np.maximum(lengths, 1.0)
    )[0]
    for e in bad:
        problems.append(f"edge {e}: stored length inconsistent with endpoints")
    diam = mesh.edge_lengths[mesh.cell_edges].max(axis=1)
    if not np.allclose(diam, mesh.cell_diameters, rtol=1e-13):
        problems.append("stored cell diameters are not the longest edge")

    # Adjacency: edge<->cell references and boundary flags.
    counts = np.zeros(mesh.num_edges, dtype=int)
    for c in range(mesh.num_cells):
        for j in range(3):
            e = mesh.cell_edges[c, j]
            a, b = mesh.cell_vertices[c, j], mesh.cell_vertices[c, (j + 1) % 3]
            ev = mesh.edge_vertices[e]
            if {int(a), int(b)} != {int(ev[0]), int(ev[1])}:
                problems.append(f"cell {c}: edge {e} does not join local vertices {j},{(j + 1) % 3}")
            counts[e] += 1
            if c not in mesh.edge_cells[e]:
                problems.append(f"edge {e}: missing back-reference to cell {c}")
    for e in range(mesh.num_edges):
        nadj = counts[e]
        if nadj == 0:
            problems.append(f"edge {e}: dangling (referenced by no cell)")
        elif nadj > 2:
            problems.append(f"edge {e}: referenced by {nadj} cells")
        elif bool(mesh.edge_boundary[e]) != (nadj == 1):
            problems.append(f"edge {e}: boundary flag inconsistent with {nadj} adjacent cells")

    # Euler relation for a topological disc.
    euler = mesh.num_vertices - mesh.num_edges + mesh.num_cells
    if euler != 1:
        problems.append(f"Euler relation violated: V-E+C = {euler} != 1")

    # Normals: unit length, outward, antiparallel across interior edges.
    centroids = mesh.cell_centroids()
    for c in range(mesh.num_cells):
        for j in range(3):
            nvec = mesh.cell_edge_normals[c, j]
            if abs(np.hypot(nvec[0], nvec[1]) - 1.0) > 1e-12:
                problems.append(f"cell {c}, edge slot {j}: normal not unit length")
            e = mesh.cell_edges[c, j]
            mid = coords[mesh.edge_vertices[e]].mean(axis=0)
            if np.dot(nvec, mid - centroids[c]) <= 0:
                problems.append(f"cell {c}, edge slot {j}: normal not outward")
    for e in np.nonzero(~mesh.edge_boundary)[0]:
        c1, c2 = mesh.edge_cells[e]
        j1 = int(np.nonzero(mesh.cell_edges[c1] == e)[0][0])
        j2 = int(np.nonzero(mesh.cell_edges[c2] == e)[0][0])
        dot = float(np.dot(mesh.cell_edge_normals[c1, j1], mesh.cell_edge_normals[c2, j2]))
        if abs(dot + 1.0) > 1e-12:
            problems.append(f"edge {e}: per-cell normals not antiparallel (dot={dot:.3e})")

    return problems


def write_mesh(mesh: Mesh, path) -> None:
    """Write the mesh in the plain-text `v x y` / `c i j k` format."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# domain = {mesh.domain}\n")
        f.write(f"# vertices = {mesh.num_vertices}, cells = {mesh.num_cells}\n")
        for x, y in mesh.vertex_coords:
            f.write(f"v {x:.17g} {y:.17g}\n")
        for i, j, k in mesh.cell_vertices:
            f.write(f"c {i} {j} {k}\n")
