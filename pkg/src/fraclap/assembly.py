"""Stiffness, mass and load assembly for the integral fractional Laplacian.

The bilinear form is split into element-pair integrals of the difference
quotient and, unless the regional variant is requested, an element/boundary
edge term obtained from the divergence theorem.  Touching pairs use the
collapsed-coordinate tables from :mod:`fraclap.quadrature`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .mesh import DofMap, TriangleMesh, prolongation, refine_uniform
from .quadrature import (OrderPlan, SingularityError, duffy_table, plan_orders,
                         prepare_duffy, simplex_gauss)

DENSE_CAP = 20_000

# ---------------------------------------------------------------------------
# Gamma function and the normalisation constant
# ---------------------------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993, 676.5203681218851, -1259.1392167224028,
    771.32342877765313, -176.61502916214059, 12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
)


def gamma(x: float) -> float:
    """Lanczos approximation (g = 7, nine terms) with reflection below 1/2."""
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma(1.0 - x))
    x -= 1.0
    acc = _LANCZOS[0]
    for k in range(1, 9):
        acc += _LANCZOS[k] / (x + k)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def normalization(d: int, s: float) -> float:
    """C(d, s) = 4^s s Gamma(s + d/2) / (pi^(d/2) Gamma(1 - s))."""
    if d not in (1, 2):
        raise ValueError("only d = 1 and d = 2 are supported")
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {s}")
    return 4.0 ** s * s * gamma(s + d / 2) / (math.pi ** (d / 2) * gamma(1.0 - s))


@dataclass(frozen=True)
class BilinearParams:
    s: float
    d: int = 2
    regional: bool = False
    Cds: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "Cds", normalization(self.d, self.s))


# ---------------------------------------------------------------------------
# Quadrature data handed to the compiled kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelData:
    s: float
    plan: OrderPlan
    near_k: np.ndarray
    near_kb: np.ndarray
    ee: tuple  # (w1, p1, w2, p2, w3, p3)
    edge: tuple  # (w1, psi1, phi1, w2, psi2, phi2)
    bank: dict

    def pair_args(self):
        b = self.bank
        return (b["tp"], b["tw"], b["tn"], self.near_k, self.plan.cutoffD,
                self.plan.farOrder) + self.ee

    def edge_args(self):
        b = self.bank
        return (b["tp"], b["tw"], b["tn"], b["sp"], b["sw"], b["sn"], self.near_kb,
                self.plan.cutoffD, self.plan.farOrderBoundary) + self.edge


_KD_CACHE: dict = {}


def kernel_data(s: float, plan: OrderPlan) -> KernelData:
    key = (s, plan)
    if key in _KD_CACHE:
        return _KD_CACHE[key]
    ee = []
    for c in (1, 2, 3):
        pr = prepare_duffy(duffy_table(c, "element-element", s), plan.kT, s)
        ee += [np.ascontiguousarray(pr.weights), np.ascontiguousarray(pr.psi)]
    edge = []
    for c in (1, 2):
        tab = duffy_table(c, "element-edge", s, boundary_interior_only=(c == 2 and s >= 0.5))
        pr = prepare_duffy(tab, plan.kTboundary, s)
        phi = np.zeros((len(pr.weights), 3))
        phi[:, :3] = pr.phi[:, :3]
        edge += [np.ascontiguousarray(pr.weights), np.ascontiguousarray(pr.psi), phi]
    _, k, kb = plan.near_table()
    kd = KernelData(s, plan, k, kb, tuple(ee), tuple(edge), K.rule_banks())
    _KD_CACHE[key] = kd
    return kd


def default_plan(mesh: TriangleMesh, s: float, **kw) -> OrderPlan:
    return plan_orders(mesh.h, s, **kw)


# ---------------------------------------------------------------------------
# Local contributions
# ---------------------------------------------------------------------------

def _check_triangle(mesh: TriangleMesh, k: int) -> np.ndarray:
    if not 0 <= k < mesh.nt:
        raise IndexError(f"element {k} is not part of this mesh")
    return np.ascontiguousarray(mesh.triangles[k])


def pair_contribution(mesh: TriangleMesh, k1: int, k2: int, params: BilinearParams,
                      plan: OrderPlan | None = None):
    """Local block of the ordered pair (K, K~) over the union of their vertices.

    Returns ``(vertices, block)``; the block already carries C(d, s)/2.
    """
    plan = plan or default_plan(mesh, params.s)
    kd = kernel_data(params.s, plan)
    blk = np.zeros((6, 6))
    V = np.ascontiguousarray(mesh.vertices)
    nloc, verts, _ = K.pair_block(V, _check_triangle(mesh, k1), _check_triangle(mesh, k2),
                                  params.s, *kd.pair_args(), blk)
    # the kernel integrates K x K~ and K~ x K together
    half = 1.0 if k1 == k2 else 0.5
    return verts[:nloc].copy(), blk[:nloc, :nloc] * (0.5 * params.Cds * half)


def boundary_contribution(mesh: TriangleMesh, k: int, edge: int, params: BilinearParams,
                          plan: OrderPlan | None = None, interior_only: bool | None = None):
    """Element/boundary-edge block over the vertices of K, times C(d, s)/(2s).

    For s >= 1/2 and an edge of K only the entry of the vertex opposite the
    edge is available; asking for the full block raises SingularityError.
    """
    if not 0 <= edge < mesh.nb:
        raise IndexError("edge index does not refer to a boundary edge")
    plan = plan or default_plan(mesh, params.s)
    t = _check_triangle(mesh, k)
    p, q = mesh.boundary_edges[edge]
    on_edge = int(p in t) + int(q in t)
    if on_edge == 2 and params.s >= 0.5 and interior_only is False:
        raise SingularityError("boundary-vertex entries diverge for s >= 1/2 on an edge of K")
    kd = kernel_data(params.s, plan)
    blk = np.zeros((6, 6))
    loc = K.edge_block(np.ascontiguousarray(mesh.vertices), t, int(p), int(q), params.s,
                       *kd.edge_args(), blk)
    return loc.copy(), blk[:3, :3] * (params.Cds / (2 * params.s))


pairContribution = pair_contribution
boundaryContribution = boundary_contribution


# ---------------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------------

def assemble_dense(mesh: TriangleMesh, dofmap: DofMap, params: BilinearParams,
                   plan: OrderPlan | None = None, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense stiffness matrix; every unordered element pair visited once."""
    if dofmap.n > cap:
        raise MemoryError(f"dense path refuses n = {dofmap.n} > cap {cap}")
    if len(dofmap.dof_of_vertex) != mesh.nv:
        raise ValueError("DoF map does not belong to this mesh")
    plan = plan or default_plan(mesh, params.s)
    kd = kernel_data(params.s, plan)
    V = np.ascontiguousarray(mesh.vertices)
    T = np.ascontiguousarray(mesh.triangles)
    dof = np.ascontiguousarray(dofmap.dof_of_vertex)
    A = np.zeros((dofmap.n, dofmap.n))
    K.dense_pairs(V, T, dof, params.s, *kd.pair_args(), A)
    A *= 0.5 * params.Cds
    if not params.regional:
        E = np.ascontiguousarray(mesh.boundary_edges)
        B = np.zeros_like(A)
        K.dense_edges(V, T, E, dof, params.s, *kd.edge_args(), 1.0, B)
        A += B * (params.Cds / (2 * params.s))
    return A


assembleDense = assemble_dense


def assemble_mass(mesh: TriangleMesh, dofmap: DofMap) -> sp.csr_matrix:
    """P1 mass matrix restricted to the DoFs: |K|/12 (1 + delta_ij)."""
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    dof = dofmap.dof_of_vertex[mesh.triangles]
    vals = mesh.areas[:, None, None] * local[None]
    rows = np.repeat(dof, 3, axis=1).ravel()
    cols = np.tile(dof, (1, 3)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    M = sp.coo_matrix((vals.ravel()[keep], (rows[keep], cols[keep])),
                      shape=(dofmap.n, dofmap.n)).tocsr()
    M.sum_duplicates()
    return M


assembleMass = assemble_mass


def lumped_mass(mesh: TriangleMesh, dofmap: DofMap) -> np.ndarray:
    return np.asarray(assemble_mass(mesh, dofmap).sum(axis=1)).ravel()


def assemble_load(mesh: TriangleMesh, dofmap: DofMap, f: Callable | float,
                  order: int = 4) -> np.ndarray:
    """b_i = int f phi_i by an element-wise simplex rule.

    ``f`` maps an (N, 2) array of points to N values; a number means a constant.
    """
    rule = simplex_gauss(order)
    xi, et = rule.nodes[:, 0], rule.nodes[:, 1]
    lam = np.column_stack([1 - xi - et, xi, et])  # (q, 3)
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    X = np.einsum("qa,tad->tqd", lam, p)
    if callable(f):
        fx = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(mesh.nt, -1)
    else:
        fx = np.full((mesh.nt, len(xi)), float(f))
    wk = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    local = np.einsum("tq,qa->ta", fx * wk, lam)
    dof = dofmap.dof_of_vertex[mesh.triangles]
    b = np.zeros(dofmap.n)
    keep = dof >= 0
    np.add.at(b, dof[keep], local[keep])
    return b


assembleLoad = assemble_load


def prolongation_chain(meshes: list[TriangleMesh], dofmaps: list[DofMap]):
    """Composite prolongation from meshes[0] to meshes[-1]."""
    P = sp.identity(dofmaps[0].n, format="csr")
    for k in range(1, len(meshes)):
        P = prolongation(meshes[k], dofmaps[k - 1], dofmaps[k]) @ P
    return P.tocsr()


def assemble_load_from_interpolant(fine_meshes: list[TriangleMesh], fine_dofmaps: list[DofMap],
                                   u: Callable, params: BilinearParams,
                                   plan: OrderPlan | None = None,
                                   A_fine: np.ndarray | None = None) -> np.ndarray:
    """Load vector a(I u, phi_j) for the coarse basis, via a finer nested mesh.

    ``fine_meshes`` runs from the solve mesh to the fine mesh (at least two
    entries), with matching DoF maps.  The interpolant lives on the last mesh.
    """
    if len(fine_meshes) < 2:
        raise ValueError("the interpolation mesh must strictly refine the solve mesh")
    for a, b in zip(fine_meshes[:-1], fine_meshes[1:]):
        if b.parents is None or len(b.parents) != b.nv or b.nt != 4 * a.nt:
            raise ValueError("meshes are not nested")
    fine, fdof = fine_meshes[-1], fine_dofmaps[-1]
    if A_fine is None:
        A_fine = assemble_dense(fine, fdof, params, plan)
    uI = np.asarray(u(fine.vertices[fdof.vertex_of_dof]), dtype=float)
    P = prolongation_chain(fine_meshes, fine_dofmaps)
    return P.T @ (A_fine @ uI)


assembleLoadFromInterpolant = assemble_load_from_interpolant


def refine_chain(mesh: TriangleMesh, extra: int) -> list[TriangleMesh]:
    out = [mesh]
    for _ in range(extra):
        out.append(refine_uniform(out[-1]))
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def format_triplets(A, tol: float = 0.0) -> str:
    """``i j value`` lines with 17 significant digits, row-major order."""
    if sp.issparse(A):
        C = A.tocoo()
        order = np.lexsort((C.col, C.row))
        rows, cols, vals = C.row[order], C.col[order], C.data[order]
    else:
        A = np.asarray(A)
        rows, cols = np.nonzero(np.abs(A) > tol) if tol > 0 else np.nonzero(A)
        vals = A[rows, cols]
    return "".join(f"{i} {j} {v:.16e}\n" for i, j, v in zip(rows, cols, vals))


def write_triplets(A, path: str | Path) -> None:
    Path(path).write_text(format_triplets(A))


def read_triplets(path: str | Path, n: int) -> np.ndarray:
    A = np.zeros((n, n))
    for line in Path(path).read_text().splitlines():
        i, j, v = line.split()
        A[int(i), int(j)] = float(v)
    return A
