"""Panel clustering: cluster tree, block partition, Chebyshev far field.

Near-field entries are computed exactly (up to quadrature) without visiting
distant elements: for each element K the integral of the kernel over the
elements that do not touch K is rewritten, with the divergence theorem, as an
integral over the boundary of the vertex patch of K.  Only the cross terms
phi_i(x) phi_j(y) then remain, and for admissible cluster pairs those are
replaced by tensor Chebyshev interpolation of the kernel.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .assembly import BilinearParams, assemble_dense, default_plan, kernel_data
from .mesh import DofMap, TriangleMesh
from .quadrature import OrderPlan, default_ell, simplex_gauss


# ---------------------------------------------------------------------------
# Chebyshev interpolation on boxes
# ---------------------------------------------------------------------------

def chebyshev_points(m: int) -> np.ndarray:
    """Chebyshev points of the first kind on [-1, 1]."""
    return np.cos((2 * np.arange(m) + 1) * np.pi / (2 * m))


def lagrange_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """L[k, a] = a-th Lagrange polynomial on ``nodes`` evaluated at x[k]."""
    x = np.asarray(x, float)
    diff = x[:, None] - nodes[None, :]
    out = np.ones((len(x), len(nodes)))
    for a in range(len(nodes)):
        for b in range(len(nodes)):
            if a != b:
                out[:, a] *= diff[:, b] / (nodes[a] - nodes[b])
    return out


@dataclass
class ClusterNode:
    index: int
    dofs: np.ndarray
    center: np.ndarray  # centre of the square box
    half: float  # half side length
    level: int
    parent: int = -1
    children: list[int] = field(default_factory=list)
    leafset: bool = False  # first cluster with at most leafSize DoFs on its path
    below: bool = False  # strict descendant of a leaf-set cluster

    @property
    def diam(self) -> float:
        return 2.0 * math.sqrt(2.0) * self.half

    def nodes_1d(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        r = chebyshev_points(m) * self.half
        return self.center[0] + r, self.center[1] + r

    def chebyshev_nodes(self, m: int) -> np.ndarray:
        """(m*m, 2) tensor nodes, first axis slowest."""
        gx, gy = self.nodes_1d(m)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def lagrange(self, m: int, pts: np.ndarray) -> np.ndarray:
        """(npts, m*m) values of the tensor Lagrange basis at pts."""
        gx, gy = self.nodes_1d(m)
        Lx = lagrange_matrix(gx, pts[:, 0])
        Ly = lagrange_matrix(gy, pts[:, 1])
        return (Lx[:, :, None] * Ly[:, None, :]).reshape(len(pts), m * m)


def box_distance(a: ClusterNode, b: ClusterNode) -> float:
    gap = np.maximum(np.abs(a.center - b.center) - (a.half + b.half), 0.0)
    return float(np.hypot(*gap))


def admissible(a: ClusterNode, b: ClusterNode, eta: float) -> bool:
    return eta * box_distance(a, b) >= max(a.diam, b.diam)


# ---------------------------------------------------------------------------
# Cluster tree
# ---------------------------------------------------------------------------

@dataclass
class ClusterTree:
    nodes: list[ClusterNode]
    m: int
    leaf_size: int
    n: int
    support_lo: np.ndarray
    support_hi: np.ndarray
    coords: np.ndarray
    shift: dict = field(default_factory=dict)
    moments: np.ndarray | None = None  # (n, m, m) basis far-field coefficients

    @property
    def root(self) -> ClusterNode:
        return self.nodes[0]

    def leaves(self) -> list[ClusterNode]:
        return [c for c in self.nodes if not c.children]

    def shift_matrices(self, child: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis L^parent_a(xi^child_b), i.e. E = kron(Sx, Sy)."""
        if child not in self.shift:
            c = self.nodes[child]
            p = self.nodes[c.parent]
            px, py = p.nodes_1d(self.m)
            cx, cy = c.nodes_1d(self.m)
            self.shift[child] = (lagrange_matrix(px, cx).T, lagrange_matrix(py, cy).T)
        return self.shift[child]

    def shift_coefficients(self, child: int) -> np.ndarray:
        """(m*m, m*m) matrix E[alpha, beta] = L^parent_alpha(xi^child_beta)."""
        Sx, Sy = self.shift_matrices(child)
        return np.kron(Sx, Sy)


def _support_boxes(mesh: TriangleMesh, dofmap: DofMap):
    vdofs = dofmap.vertex_of_dof
    lo = np.empty((dofmap.n, 2))
    hi = np.empty((dofmap.n, 2))
    v2t = mesh.vertex_triangles()
    for i, v in enumerate(vdofs):
        pts = mesh.vertices[mesh.triangles[v2t[v]].ravel()]
        lo[i] = pts.min(axis=0)
        hi[i] = pts.max(axis=0)
    return lo, hi


def _square(lo, hi):
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    return center, half


def build_cluster_tree(mesh: TriangleMesh, dofmap: DofMap, leaf_size: int = 8,
                       m: int = 6, moment_order: int | None = None) -> ClusterTree:
    """Bisection tree over the DoFs with square boxes around the supports."""
    if m < 2 or leaf_size < 1:
        raise ValueError("need m >= 2 and leafSize >= 1")
    if dofmap.n == 0:
        raise ValueError("cannot cluster an empty DoF set")
    coords = mesh.vertices[dofmap.vertex_of_dof]
    slo, shi = _support_boxes(mesh, dofmap)
    nodes: list[ClusterNode] = []

    def make(dofs, level, parent, below):
        center, half = _square(slo[dofs].min(axis=0), shi[dofs].max(axis=0))
        node = ClusterNode(len(nodes), dofs, center, half, level, parent)
        node.below = below
        node.leafset = (not below) and len(dofs) <= leaf_size
        nodes.append(node)
        return node

    root = make(np.arange(dofmap.n), 0, -1, False)
    stack = [root]
    while stack:
        node = stack.pop()
        dofs = node.dofs
        if len(dofs) == 1:
            continue
        if node.leafset or node.below:
            parts = [dofs[k:k + 1] for k in range(len(dofs))]
            below = True
        else:
            pts = coords[dofs]
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            axis = int(np.argmax(hi - lo))
            mid = 0.5 * (lo[axis] + hi[axis])
            left = pts[:, axis] <= mid
            if left.all() or not left.any():
                order = np.argsort(pts[:, axis], kind="stable")
                left = np.zeros(len(dofs), dtype=bool)
                left[order[: len(dofs) // 2]] = True
            parts = [dofs[left], dofs[~left]]
            below = False
        for part in parts:
            child = make(part, node.level + 1, node.index, below)
            node.children.append(child.index)
        # visit children in creation order for a deterministic numbering
        stack.extend(nodes[c] for c in reversed(node.children))
    tree = ClusterTree(nodes, m, leaf_size, dofmap.n, slo, shi, coords)
    tree.moments = basis_coefficients(tree, mesh, dofmap, moment_order or m + 1)
    return tree


buildClusterTree = build_cluster_tree


def basis_coefficients(tree: ClusterTree, mesh: TriangleMesh, dofmap: DofMap,
                       order: int) -> np.ndarray:
    """int phi_i L_alpha^sigma over supp phi_i, sigma the leaf-set cluster of i."""
    m = tree.m
    rule = simplex_gauss(order)
    xi, et = rule.nodes[:, 0], rule.nodes[:, 1]
    lam = np.column_stack([1 - xi - et, xi, et])
    P = mesh.vertices[mesh.triangles]
    X = np.einsum("qa,tad->tqd", lam, P)  # (nt, q, 2)
    Wt = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    v2t = mesh.vertex_triangles()
    vdofs = dofmap.vertex_of_dof
    out = np.zeros((tree.n, m * m))
    for node in tree.nodes:
        if not node.leafset:
            continue
        for i in node.dofs:
            v = vdofs[i]
            tris = v2t[v]
            corner = np.argmax(mesh.triangles[tris] == v, axis=1)
            Lv = node.lagrange(m, X[tris].reshape(-1, 2)).reshape(len(tris), -1, m * m)
            w = Wt[tris] * lam[:, corner].T
            out[i] = np.einsum("tq,tqk->k", w, Lv)
    return out.reshape(tree.n, m, m)


# ---------------------------------------------------------------------------
# Block partition
# ---------------------------------------------------------------------------

@dataclass
class BlockPartition:
    """Unordered cluster pairs (sigma <= tau by index) covering I x I once.

    ``far`` blocks keep the m^2 x m^2 kernel matrix; ``far_dense`` blocks are
    admissible too but are cheaper to store expanded to |sigma| x |tau|
    interpolated entries; ``near`` blocks hold exact entries.
    """

    far: list[tuple[int, int]]
    near: list[tuple[int, int]]
    eta: float
    far_dense: list[tuple[int, int]] = field(default_factory=list)

    @property
    def admissible(self) -> list[tuple[int, int]]:
        return sorted(self.far + self.far_dense)

    def covered_pairs(self, tree: ClusterTree) -> int:
        total = 0
        for blocks in (self.far, self.far_dense, self.near):
            for a, b in blocks:
                k = len(tree.nodes[a].dofs) * len(tree.nodes[b].dofs)
                total += k if a == b else 2 * k
        return total


def partition_blocks(tree: ClusterTree, eta: float = 1.0,
                     dense_if_cheaper: bool = True) -> BlockPartition:
    """Recursive descent from (root, root) over unordered cluster pairs.

    Admissible pairs are far-field blocks, stored expanded when that takes
    fewer reals than a kernel matrix.  Pairs of leaf-set clusters that are
    not admissible end the recursion as near blocks.
    """
    if eta <= 0:
        raise ValueError("admissibility parameter must be positive")
    nodes = tree.nodes
    m4 = tree.m ** 4
    far, far_dense, near = [], [], []
    stack = [(0, 0)]
    while stack:
        a, b = stack.pop()
        A, B = nodes[a], nodes[b]
        key = (min(a, b), max(a, b))
        if a != b and admissible(A, B, eta):
            if A.below or B.below:
                near.append(key)
            elif dense_if_cheaper and len(A.dofs) * len(B.dofs) <= m4:
                far_dense.append(key)
            else:
                far.append(key)
            continue
        stopA = A.leafset or A.below or not A.children
        stopB = B.leafset or B.below or not B.children
        if stopA and stopB:
            near.append(key)
        elif stopA:
            stack.extend((a, c) for c in B.children)
        elif stopB:
            stack.extend((c, b) for c in A.children)
        elif a == b:
            ch = A.children
            for i, c in enumerate(ch):
                for d in ch[i:]:
                    stack.append((c, d))
        else:
            stack.extend((c, d) for c in A.children for d in B.children)
    far.sort()
    far_dense.sort()
    near.sort()
    return BlockPartition(far, near, eta, far_dense)


partitionBlocks = partition_blocks


# ---------------------------------------------------------------------------
# Hierarchical operator
# ---------------------------------------------------------------------------

class ConsistencyError(RuntimeError):
    pass


@dataclass(eq=False)
class HierarchicalOperator:
    tree: ClusterTree
    partition: BlockPartition
    params: BilinearParams
    near: sp.csr_matrix
    kernels: np.ndarray  # (nfar, m*m, m*m)
    far_sig: np.ndarray
    far_tau: np.ndarray
    _arrays: tuple = ()
    exact_entries: int = -1  # stored entries of inadmissible blocks

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"vector of length {self.n} expected, got {x.shape}")
        y = self.near @ x
        if len(self.far_sig):
            order_up, parent, Sx, Sy, dof_node = self._arrays
            yf = K.far_matvec(x, order_up, parent, Sx, Sy, self.tree.moments, dof_node, self.far_sig,
                              self.far_tau, self.kernels, self.tree.m)
            y -= self.params.Cds * yf
        return y

    __call__ = matvec

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self) -> np.ndarray:
        return self.near.diagonal()

    def to_dense(self) -> np.ndarray:
        I = np.eye(self.n)
        return np.column_stack([self.matvec(I[:, k]) for k in range(self.n)])

    def stored_reals(self) -> int:
        m2 = self.tree.m ** 2
        n_shift = 2 * self.tree.m ** 2 * max(len(self._arrays[1]) - 1, 0) if self._arrays else 0
        far = len(self.far_sig) * m2 * m2
        moments = self.n * m2 if len(self.far_sig) else 0
        return int(self.near.nnz + far + moments + n_shift)

    def stats(self) -> dict:
        exact = self.near.nnz if self.exact_entries < 0 else self.exact_entries
        return {"admissible": len(self.partition.admissible), "near_entries": int(exact),
                "stored_reals": self.stored_reals()}


def _csr_pattern(tree: ClusterTree, near: list[tuple[int, int]]) -> sp.csr_matrix:
    rows, cols = [], []
    for a, b in near:
        da, db = tree.nodes[a].dofs, tree.nodes[b].dofs
        r = np.repeat(da, len(db))
        c = np.tile(db, len(da))
        rows.append(r)
        cols.append(c)
        if a != b:
            rows.append(c)
            cols.append(r)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    P = sp.csr_matrix((np.zeros(len(r)), (r, c)), shape=(tree.n, tree.n))
    P.sort_indices()
    return P


def _cluster_elements(mesh: TriangleMesh, dofmap: DofMap, tree: ClusterTree, ids):
    """DoF and element CSR lists for the clusters in ``ids``."""
    v2t = mesh.vertex_triangles()
    vdofs = dofmap.vertex_of_dof
    dptr, didx, eptr, eidx = [0], [], [0], []
    for c in ids:
        dofs = tree.nodes[c].dofs
        didx.append(dofs)
        dptr.append(dptr[-1] + len(dofs))
        els = np.unique(np.concatenate([v2t[v] for v in vdofs[dofs]]))
        eidx.append(els)
        eptr.append(eptr[-1] + len(els))
    cat = lambda x: np.concatenate(x).astype(np.int64) if x else np.zeros(0, np.int64)
    return (np.array(dptr, np.int64), cat(didx), np.array(eptr, np.int64), cat(eidx))


def _vertex_triangle_csr(mesh: TriangleMesh):
    v2t = mesh.vertex_triangles()
    ptr = np.zeros(mesh.nv + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in v2t])
    idx = np.concatenate(v2t).astype(np.int64)
    return ptr, idx


def _triangle_boundary_flags(mesh: TriangleMesh) -> np.ndarray:
    bset = {(int(a), int(b)) for a, b in mesh.boundary_edges}
    T = mesh.triangles
    flags = np.zeros((mesh.nt, 3), dtype=np.bool_)
    for k in range(3):
        a, b = T[:, k], T[:, (k + 1) % 3]
        flags[:, k] = [(int(x), int(y)) in bset for x, y in zip(a, b)]
    return flags


def interpolation_order_for(h: float, s: float, ell: float | None = None,
                            gamma: float = 0.25, d: int = 2) -> int:
    """Chebyshev order that keeps the far-field error at the target rate."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    ell = default_ell(s) if ell is None else ell
    lh = abs(math.log(h))
    if d == 1 and s < 0.5:
        coef = ell - s + 1.0  # kernel exponent 1 + 2s with d = 1
    elif d == 1:
        coef = ell + s + 1.0
    else:
        coef = ell - s + d + 2 * s
    m = math.ceil(coef * lh / abs(math.log(gamma)) - 1e-12)
    return int(min(12, max(3, m)))


interpolationOrderFor = interpolation_order_for


def _cluster_coefficients(tree: ClusterTree, c: int, memo: dict):
    """DoFs of cluster c and their far-field coefficients in c's box."""
    if c in memo:
        return memo[c]
    node = tree.nodes[c]
    if node.leafset:
        out = (node.dofs, tree.moments[node.dofs])
    else:
        parts_d, parts_w = [], []
        for ch in node.children:
            d, w = _cluster_coefficients(tree, ch, memo)
            Sx, Sy = tree.shift_matrices(ch)
            parts_d.append(d)
            parts_w.append(np.einsum("ap,kpq,bq->kab", Sx, w, Sy, optimize=True))
        out = (np.concatenate(parts_d), np.concatenate(parts_w))
    memo[c] = out
    return out


def _expanded_far(tree: ClusterTree, blocks, kernel_matrix, C: float) -> sp.csr_matrix:
    """Admissible blocks stored as dense interpolated entries, both triangles."""
    memo: dict = {}
    mm = tree.m ** 2
    rows, cols, vals = [], [], []
    for a, b in blocks:
        da, wa = _cluster_coefficients(tree, a, memo)
        db, wb = _cluster_coefficients(tree, b, memo)
        B = -C * ((wa.reshape(-1, mm) @ kernel_matrix(a, b)) @ wb.reshape(-1, mm).T)
        r = np.repeat(da, len(db))
        cc = np.tile(db, len(da))
        rows += [r, cc]
        cols += [cc, r]
        vals += [B.ravel(), B.ravel()]
    r = np.concatenate(rows)
    M = sp.csr_matrix((np.concatenate(vals), (r, np.concatenate(cols))), shape=(tree.n, tree.n))
    M.sort_indices()
    return M


def assemble_hierarchical(mesh: TriangleMesh, dofmap: DofMap, params: BilinearParams,
                          plan: OrderPlan | None = None, eta: float = 1.0,
                          m: int | None = None, leaf_size: int = 8,
                          dense_if_cheaper: bool = True,
                          tree: ClusterTree | None = None) -> HierarchicalOperator:
    """Near field by the patch formulation, far field by kernel interpolation."""
    plan = plan or default_plan(mesh, params.s)
    if m is None:
        m = interpolation_order_for(mesh.h, params.s)
    if tree is None:
        tree = build_cluster_tree(mesh, dofmap, leaf_size, m)
    part = partition_blocks(tree, eta, dense_if_cheaper)
    for a, b in part.admissible:
        if box_distance(tree.nodes[a], tree.nodes[b]) <= 0.0:
            raise ConsistencyError("admissible block with touching boxes")

    n = dofmap.n
    V = np.ascontiguousarray(mesh.vertices)
    T = np.ascontiguousarray(mesh.triangles)
    dof = np.ascontiguousarray(dofmap.dof_of_vertex)
    C = params.Cds

    if not part.far and not part.far_dense:
        # every pair is near: the dense route is the exact and cheapest one
        A = assemble_dense(mesh, dofmap, params, plan, cap=max(n, 1))
        near = sp.csr_matrix(A)
        return HierarchicalOperator(tree, part, params, near, np.zeros((0, m * m, m * m)),
                                    np.zeros(0, np.int64), np.zeros(0, np.int64))

    pattern = _csr_pattern(tree, part.near)
    indptr = pattern.indptr.astype(np.int64)
    indices = pattern.indices.astype(np.int64)
    data = np.zeros(len(indices))
    kd = kernel_data(params.s, plan)

    v2t_ptr, v2t_idx = _vertex_triangle_csr(mesh)
    vdof = np.ascontiguousarray(dofmap.vertex_of_dof).astype(np.int64)
    K.near_cross_elements(V, T, dof, vdof, params.s, *kd.pair_args()[:6],
                          v2t_ptr, v2t_idx, indptr, indices, data, -C)
    flags = _triangle_boundary_flags(mesh)
    E = np.ascontiguousarray(mesh.boundary_edges)
    missed = K.near_local(V, T, dof, params.s, v2t_ptr, v2t_idx, flags, E, params.regional,
                          *kd.pair_args(), *kd.edge_args()[3:], indptr, indices, data,
                          0.5 * C, C / (2 * params.s))
    if missed:
        raise ConsistencyError(f"{missed} near-field contributions outside the pattern")
    near = sp.csr_matrix((data, indices, indptr), shape=(n, n))

    # far field
    nodes = tree.nodes
    active = [c.index for c in nodes if not c.below]
    amap = {c: k for k, c in enumerate(active)}
    parent = np.array([amap.get(nodes[c].parent, -1) for c in active], dtype=np.int64)
    Sx = np.zeros((len(active), m, m))
    Sy = np.zeros((len(active), m, m))
    for k, c in enumerate(active):
        if nodes[c].parent >= 0:
            Sx[k], Sy[k] = tree.shift_matrices(c)
    depth = np.array([nodes[c].level for c in active])
    order_up = np.argsort(-depth, kind="stable").astype(np.int64)
    dof_node = np.zeros(n, dtype=np.int64)
    for c in active:
        if nodes[c].leafset:
            dof_node[nodes[c].dofs] = amap[c]
    expo = -1.0 - params.s

    grids = {}

    def kernel_matrix(a, b):
        # tensor nodes: squared distance splits into per-axis parts
        for c in (a, b):
            if c not in grids:
                grids[c] = nodes[c].nodes_1d(m)
        (ax, ay), (bx, by) = grids[a], grids[b]
        dx2 = (ax[:, None] - bx[None, :]) ** 2
        dy2 = (ay[:, None] - by[None, :]) ** 2
        r2 = dx2[:, None, :, None] + dy2[None, :, None, :]
        return (r2 ** expo).reshape(m * m, m * m)

    kern = np.empty((len(part.far), m * m, m * m))
    for f, (a, b) in enumerate(part.far):
        kern[f] = kernel_matrix(a, b)
    fs = np.array([amap[a] for a, _ in part.far], dtype=np.int64)
    ft = np.array([amap[b] for _, b in part.far], dtype=np.int64)
    exact = near.nnz
    if part.far_dense:
        near = near + _expanded_far(tree, part.far_dense, kernel_matrix, C)
    op = HierarchicalOperator(tree, part, params, near, kern, fs, ft,
                              (order_up, parent, Sx, Sy, dof_node), exact)
    return op


assembleHierarchical = assemble_hierarchical


def h_matvec(op: HierarchicalOperator, x: np.ndarray) -> np.ndarray:
    return op.matvec(x)


hMatvec = h_matvec


STATS_HEADER = ["level", "admissible_pairs", "near_entries", "stored_reals"]


def stats_csv(rows: list[tuple[int, int, int, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    w.writerows(rows)
    return buf.getvalue()
