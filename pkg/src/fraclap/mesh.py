"""Triangulations of the unit disk and polygonal domains, P1 DoF maps, text I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming triangulation.

    Triangles are stored counter-clockwise.  Boundary edges are oriented so
    that the domain lies on their left (counter-clockwise traversal of the
    outer boundary).  ``parents`` maps every vertex to the two vertices of the
    next coarser mesh whose mean it was created from (a vertex inherited from
    the coarser mesh has both parents equal to itself); it is ``None`` for a
    mesh that was not produced by refinement.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    level: int = 0
    parents: np.ndarray | None = None
    circle: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_edges):
            arr.setflags(write=False)

    # -- sizes ------------------------------------------------------------
    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @property
    def nb(self) -> int:
        return len(self.boundary_edges)

    # -- geometry --------------------------------------------------------
    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            self._cache["areas"] = 0.5 * signed_double_areas(self.vertices, self.triangles)
        return self._cache["areas"]

    @property
    def diameters(self) -> np.ndarray:
        if "diam" not in self._cache:
            p = self.vertices[self.triangles]
            d = np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)])
            self._cache["diam"] = d.max(axis=0)
        return self._cache["diam"]

    @property
    def h(self) -> float:
        """Global mesh size: the largest element diameter."""
        return float(self.diameters.max())

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (sorted pairs), lexicographic order."""
        if "edges" not in self._cache:
            t = self.triangles
            e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            self._cache["edges"] = np.unique(e, axis=0)
        return self._cache["edges"]

    @property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.nv, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return mask

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def vertex_triangles(self) -> list[np.ndarray]:
        """For each vertex, the indices of the triangles that contain it."""
        if "v2t" not in self._cache:
            order = np.argsort(self.triangles.ravel(), kind="stable")
            verts = self.triangles.ravel()[order]
            cuts = np.searchsorted(verts, np.arange(self.nv + 1))
            tri_of = order // 3
            self._cache["v2t"] = [tri_of[cuts[i]:cuts[i + 1]] for i in range(self.nv)]
        return self._cache["v2t"]

    def validate(self) -> None:
        """Raise ValueError unless the mesh is a valid conforming triangulation."""
        if np.any(self.areas <= 0):
            raise ValueError("triangle with non-positive signed area")
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(e, axis=1)
        uniq, counts = np.unique(key, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("edge shared by more than two triangles")
        bnd = {tuple(x) for x in uniq[counts == 1]}
        given = {tuple(sorted(x)) for x in self.boundary_edges}
        if bnd != given:
            raise ValueError("boundary edge list does not match the one-sided edges")
        directed = {tuple(x) for x in e}
        for a, b in self.boundary_edges:
            if (a, b) not in directed:
                raise ValueError("boundary edge not oriented with the domain on its left")


def signed_double_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    return ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))


def coarse_disk() -> TriangleMesh:
    """Four-triangle fan: the origin plus four points on the unit circle."""
    ang = np.arange(4) * (np.pi / 2)
    verts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    verts[np.abs(verts) < 1e-15] = 0.0
    tris = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]], dtype=np.int64)
    bnd = np.array([[1, 2], [2, 3], [3, 4], [4, 1]], dtype=np.int64)
    return TriangleMesh(verts, tris, bnd, 0, None, True)


def refine_uniform(mesh: TriangleMesh) -> TriangleMesh:
    """Red refinement: every triangle splits into four through edge midpoints.

    New vertices are appended in lexicographic edge order.  On a disk mesh the
    midpoints of boundary edges are pushed radially onto the unit circle.
    """
    edges = mesh.edges
    nv = mesh.nv
    lookup = {(int(a), int(b)): nv + k for k, (a, b) in enumerate(edges)}

    def mid(a, b):
        return lookup[(a, b) if a < b else (b, a)]

    newv = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    if mesh.circle:
        bkeys = np.sort(mesh.boundary_edges, axis=1)
        bidx = np.array([lookup[(int(a), int(b))] - nv for a, b in bkeys], dtype=np.int64)
        newv[bidx] /= np.linalg.norm(newv[bidx], axis=1)[:, None]
    verts = np.vstack([mesh.vertices, newv])

    tris = np.empty((4 * mesh.nt, 3), dtype=np.int64)
    for k, (a, b, c) in enumerate(mesh.triangles.tolist()):
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris[4 * k:4 * k + 4] = ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))

    bnd = np.empty((2 * mesh.nb, 2), dtype=np.int64)
    for k, (a, b) in enumerate(mesh.boundary_edges.tolist()):
        m = mid(a, b)
        bnd[2 * k] = (a, m)
        bnd[2 * k + 1] = (m, b)

    parents = np.vstack([np.column_stack([np.arange(nv), np.arange(nv)]), edges]).astype(np.int64)
    return TriangleMesh(verts, tris, bnd, mesh.level + 1, parents, mesh.circle)


def build_disk_mesh(level: int) -> TriangleMesh:
    """``level`` uniform refinements of the coarse fan of the unit disk."""
    if level < 0:
        raise ValueError("level must be non-negative")
    mesh = coarse_disk()
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def disk_hierarchy(level: int) -> list[TriangleMesh]:
    meshes = [coarse_disk()]
    for _ in range(level):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


# camelCase aliases
buildDiskMesh = build_disk_mesh
refineUniform = refine_uniform


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    """Vertex -> DoF numbering; -1 marks vertices without a DoF."""

    dof_of_vertex: np.ndarray
    n: int
    boundary_dofs: bool

    @property
    def vertex_of_dof(self) -> np.ndarray:
        return np.flatnonzero(self.dof_of_vertex >= 0)

    def to_vertices(self, u: np.ndarray) -> np.ndarray:
        """Nodal values on all vertices (zero where no DoF lives)."""
        out = np.zeros(len(self.dof_of_vertex))
        mask = self.dof_of_vertex >= 0
        out[mask] = np.asarray(u)[self.dof_of_vertex[mask]]
        return out


def build_dof_map(mesh: TriangleMesh, s: float, boundary: bool | None = None) -> DofMap:
    """P1 DoFs: every vertex when s < 1/2, interior vertices otherwise.

    ``boundary`` overrides the choice (the regional form keeps all vertices).
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {s}")
    keep_boundary = s < 0.5 if boundary is None else bool(boundary)
    dof = np.full(mesh.nv, -1, dtype=np.int64)
    if keep_boundary:
        dof[:] = np.arange(mesh.nv)
    else:
        interior = ~mesh.boundary_vertex_mask
        dof[interior] = np.arange(int(interior.sum()))
    dof.setflags(write=False)
    return DofMap(dof, int((dof >= 0).sum()), keep_boundary)


buildDofMap = build_dof_map


def prolongation(fine: TriangleMesh, coarse_dofs: DofMap, fine_dofs: DofMap):
    """Sparse P1 prolongation from the coarser mesh of ``fine`` to ``fine``.

    Inherited vertices copy the coarse value; new vertices take the mean of
    their two parents.
    """
    import scipy.sparse as sp

    if fine.parents is None:
        raise ValueError("mesh was not produced by refinement; no nesting information")
    if len(coarse_dofs.dof_of_vertex) > fine.nv:
        raise ValueError("coarse DoF map does not belong to the parent mesh")
    nvc = len(coarse_dofs.dof_of_vertex)
    if fine.parents[:nvc, 0].tolist() != list(range(nvc)):
        raise ValueError("meshes are not nested")
    rows, cols, vals = [], [], []
    for v in range(fine.nv):
        i = fine_dofs.dof_of_vertex[v]
        if i < 0:
            continue
        a, b = fine.parents[v]
        if a == b:
            j = coarse_dofs.dof_of_vertex[a]
            if j >= 0:
                rows.append(i); cols.append(j); vals.append(1.0)
        else:
            for p in (a, b):
                j = coarse_dofs.dof_of_vertex[p]
                if j >= 0:
                    rows.append(i); cols.append(j); vals.append(0.5)
    return sp.csr_matrix((vals, (rows, cols)), shape=(fine_dofs.n, coarse_dofs.n))


# ---------------------------------------------------------------------------
# Plain-text format
# ---------------------------------------------------------------------------

def format_mesh(mesh: TriangleMesh) -> str:
    lines = [f"vertices {mesh.nv} triangles {mesh.nt} boundary {mesh.nb}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines += [f"{a} {b}" for a, b in mesh.boundary_edges.tolist()]
    return "\n".join(lines) + "\n"


def write_mesh(mesh: TriangleMesh, path: str | Path) -> None:
    Path(path).write_text(format_mesh(mesh))


def parse_mesh(text: str, circle: bool = False) -> TriangleMesh:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    head = rows[0]
    if len(head) != 6 or head[0::2] != ["vertices", "triangles", "boundary"]:
        raise ValueError("bad mesh header")
    nv, nt, nb = int(head[1]), int(head[3]), int(head[5])
    if len(rows) != 1 + nv + nt + nb:
        raise ValueError("mesh file length does not match its header")
    verts = np.array(rows[1:1 + nv], dtype=float).reshape(nv, 2)
    tris = np.array(rows[1 + nv:1 + nv + nt], dtype=np.int64).reshape(nt, 3)
    bnd = np.array(rows[1 + nv + nt:], dtype=np.int64).reshape(nb, 2)
    flip = signed_double_areas(verts, tris) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriangleMesh(verts, tris, bnd, 0, None, circle)


def read_mesh(path: str | Path, circle: bool = False) -> TriangleMesh:
    return parse_mesh(Path(path).read_text(), circle)
