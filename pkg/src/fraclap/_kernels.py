"""Compiled inner loops for the stiffness assembly.

Everything here works on plain arrays; the Python side (``assembly``,
``clustering``) prepares quadrature data and scatters results.  Integrals are
returned without the normalisation constant.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .quadrature import MAX_ORDER, simplex_gauss, interval_gauss


# ---------------------------------------------------------------------------
# rule banks: padded arrays indexed by order
# ---------------------------------------------------------------------------

_BANK: dict = {}


def rule_banks():
    """Simplex and interval Gauss rules for every order, padded to one array."""
    if not _BANK:
        tri = [simplex_gauss(k) for k in range(1, MAX_ORDER + 1)]
        seg = [interval_gauss(k) for k in range(1, MAX_ORDER + 1)]
        nt = max(r.npts for r in tri)
        ns = max(r.npts for r in seg)
        tp = np.zeros((MAX_ORDER + 1, nt, 2))
        tw = np.zeros((MAX_ORDER + 1, nt))
        tn = np.zeros(MAX_ORDER + 1, dtype=np.int64)
        sp = np.zeros((MAX_ORDER + 1, ns))
        sw = np.zeros((MAX_ORDER + 1, ns))
        sn = np.zeros(MAX_ORDER + 1, dtype=np.int64)
        for k, (r, q) in enumerate(zip(tri, seg), start=1):
            tp[k, :r.npts] = r.nodes
            tw[k, :r.npts] = r.weights
            tn[k] = r.npts
            sp[k, :q.npts] = q.nodes[:, 0]
            sw[k, :q.npts] = q.weights
            sn[k] = q.npts
        _BANK.update(tp=tp, tw=tw, tn=tn, sp=sp, sw=sw, sn=sn)
    return _BANK


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _tri_area(V, a, b, c):
    return 0.5 * abs((V[b, 0] - V[a, 0]) * (V[c, 1] - V[a, 1])
                     - (V[b, 1] - V[a, 1]) * (V[c, 0] - V[a, 0]))


@njit(cache=True)
def _point_segment(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        t = min(1.0, max(0.0, t))
    ex = ax + t * dx - px
    ey = ay + t * dy - py
    return np.sqrt(ex * ex + ey * ey)


@njit(cache=True)
def tri_tri_distance(V, ta, tb):
    """Distance between two triangles with disjoint closures (no overlap)."""
    d = 1e300
    for i in range(3):
        p = ta[i]
        for j in range(3):
            a = tb[j]
            b = tb[(j + 1) % 3]
            d = min(d, _point_segment(V[p, 0], V[p, 1], V[a, 0], V[a, 1], V[b, 0], V[b, 1]))
            q = tb[i]
            a = ta[j]
            b = ta[(j + 1) % 3]
            d = min(d, _point_segment(V[q, 0], V[q, 1], V[a, 0], V[a, 1], V[b, 0], V[b, 1]))
    return d


@njit(cache=True)
def tri_edge_distance(V, t, p, q):
    d = 1e300
    for i in range(3):
        d = min(d, _point_segment(V[t[i], 0], V[t[i], 1], V[p, 0], V[p, 1], V[q, 0], V[q, 1]))
        a = t[i]
        b = t[(i + 1) % 3]
        d = min(d, _point_segment(V[p, 0], V[p, 1], V[a, 0], V[a, 1], V[b, 0], V[b, 1]))
        d = min(d, _point_segment(V[q, 0], V[q, 1], V[a, 0], V[a, 1], V[b, 0], V[b, 1]))
    return d


@njit(cache=True)
def _lookup(table, cutoff, d):
    n = table.shape[0]
    k = int(d / cutoff * n)
    if k >= n:
        k = n - 1
    return table[k]


@njit(cache=True)
def _map_rule(V, t, tp, tw, npts, X, W):
    """Physical nodes and weights of the simplex rule on triangle t."""
    a, b, c = t[0], t[1], t[2]
    area2 = 2.0 * _tri_area(V, a, b, c)
    for q in range(npts):
        xi = tp[q, 0]
        et = tp[q, 1]
        X[q, 0] = V[a, 0] + xi * (V[b, 0] - V[a, 0]) + et * (V[c, 0] - V[a, 0])
        X[q, 1] = V[a, 1] + xi * (V[b, 1] - V[a, 1]) + et * (V[c, 1] - V[a, 1])
        W[q] = tw[q] * area2


# ---------------------------------------------------------------------------
# element pair integrals
# ---------------------------------------------------------------------------

@njit(cache=True)
def separated_pair(V, tK, tT, order, tp, tw, tn, s, T1, T2, X):
    """Blocks of the separated-pair integral (no normalisation):

    T1[a,b] = int_K lam_a lam_b(x) int_T k dy dx, T2 likewise with the roles
    swapped, X[a,b] = int_K int_T lam_a(x) mu_b(y) k.
    """
    n = tn[order]
    scratch = np.empty((n, 8))
    separated_pair_into(V, tK, tT, order, tp, tw, tn, s, T1, T2, X, scratch)


@njit(cache=True)
def separated_pair_into(V, tK, tT, order, tp, tw, tn, s, T1, T2, X, scratch):
    """As :func:`separated_pair`, with caller-provided (npts, 8) scratch."""
    n = tn[order]
    P = tp[order]
    Wr = tw[order]
    XK = scratch[:, 0:2]
    XT = scratch[:, 2:4]
    WK = scratch[:, 4]
    WT = scratch[:, 5]
    R = scratch[:, 6]
    S = scratch[:, 7]
    _map_rule(V, tK, P, Wr, n, XK, WK)
    _map_rule(V, tT, P, Wr, n, XT, WT)
    for p in range(n):
        R[p] = 0.0
        S[p] = 0.0
    for a in range(3):
        for b in range(3):
            T1[a, b] = 0.0
            T2[a, b] = 0.0
            X[a, b] = 0.0
    expo = -1.0 - s
    for p in range(n):
        lp0 = 1.0 - P[p, 0] - P[p, 1]
        lp1 = P[p, 0]
        lp2 = P[p, 1]
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for q in range(n):
            dx = XK[p, 0] - XT[q, 0]
            dy = XK[p, 1] - XT[q, 1]
            k = (dx * dx + dy * dy) ** expo
            wk = WT[q] * k
            R[p] += wk
            S[q] += WK[p] * k
            acc0 += wk * (1.0 - P[q, 0] - P[q, 1])
            acc1 += wk * P[q, 0]
            acc2 += wk * P[q, 1]
        w = WK[p]
        X[0, 0] += w * lp0 * acc0
        X[0, 1] += w * lp0 * acc1
        X[0, 2] += w * lp0 * acc2
        X[1, 0] += w * lp1 * acc0
        X[1, 1] += w * lp1 * acc1
        X[1, 2] += w * lp1 * acc2
        X[2, 0] += w * lp2 * acc0
        X[2, 1] += w * lp2 * acc1
        X[2, 2] += w * lp2 * acc2
    for p in range(n):
        l0 = 1.0 - P[p, 0] - P[p, 1]
        l1 = P[p, 0]
        l2 = P[p, 1]
        lam = (l0, l1, l2)
        wr = WK[p] * R[p]
        ws = WT[p] * S[p]
        for a in range(3):
            for b in range(a, 3):
                T1[a, b] += wr * lam[a] * lam[b]
                T2[a, b] += ws * lam[a] * lam[b]
    for a in range(3):
        for b in range(a):
            T1[a, b] = T1[b, a]
            T2[a, b] = T2[b, a]


@njit(cache=True)
def touching_pair(xs, nloc, w, psi, s, out):
    """sum_q w_q psi_a psi_b |sum_k psi_k x_k|^(-2-2s) over local vertices."""
    for a in range(nloc):
        for b in range(nloc):
            out[a, b] = 0.0
    expo = -1.0 - s
    for q in range(w.shape[0]):
        zx = 0.0
        zy = 0.0
        for k in range(nloc):
            zx += psi[q, k] * xs[k, 0]
            zy += psi[q, k] * xs[k, 1]
        f = w[q] * (zx * zx + zy * zy) ** expo
        for a in range(nloc):
            fa = f * psi[q, a]
            for b in range(a, nloc):
                out[a, b] += fa * psi[q, b]
    for a in range(nloc):
        for b in range(a):
            out[a, b] = out[b, a]


@njit(cache=True)
def shared_layout(tK, tT):
    """Count shared vertices and order the union as the tables expect.

    c=3: (K0, K1, K2); c=2: (a, b, K-other, T-other);
    c=1: (a, K-others..., T-others...).  Also returns the local positions of
    the vertices of K and of T in the union.
    """
    c = 0
    for i in range(3):
        for j in range(3):
            if tK[i] == tT[j]:
                c += 1
    verts = np.full(6, -1, dtype=np.int64)
    posK = np.empty(3, dtype=np.int64)
    posT = np.empty(3, dtype=np.int64)
    if c == 0:
        for i in range(3):
            verts[i] = tK[i]
            verts[3 + i] = tT[i]
            posK[i] = i
            posT[i] = 3 + i
        return c, verts, posK, posT
    shared = np.empty(c, dtype=np.int64)
    m = 0
    for i in range(3):
        for j in range(3):
            if tK[i] == tT[j]:
                shared[m] = tK[i]
                m += 1
    n = 0
    for i in range(c):
        verts[n] = shared[i]
        n += 1
    for i in range(3):
        hit = False
        for j in range(c):
            if tK[i] == shared[j]:
                hit = True
        if not hit:
            verts[n] = tK[i]
            n += 1
    for i in range(3):
        hit = False
        for j in range(c):
            if tT[i] == shared[j]:
                hit = True
        if not hit:
            verts[n] = tT[i]
            n += 1
    for i in range(3):
        for j in range(n):
            if verts[j] == tK[i]:
                posK[i] = j
            if verts[j] == tT[i]:
                posT[i] = j
    return c, verts, posK, posT


@njit(cache=True)
def pair_block(V, tK, tT, s, tp, tw, tn, near_k, cutoff, far_order,
               w1, p1, w2, p2, w3, p3, blk):
    """Integral over the unordered pair {K, T} with both orders counted.

    Returns (nloc, verts) with blk[:nloc, :nloc] holding
    int int (Phi_a(x)-Phi_a(y))(Phi_b(x)-Phi_b(y)) k over K x T plus T x K
    (once for K == T).  Also returns the order used (0 when touching).
    """
    c, verts, posK, posT = shared_layout(tK, tT)
    if c == 0:
        cx = (V[tK[0], 0] + V[tK[1], 0] + V[tK[2], 0]) / 3.0
        cy = (V[tK[0], 1] + V[tK[1], 1] + V[tK[2], 1]) / 3.0
        dx = (V[tT[0], 0] + V[tT[1], 0] + V[tT[2], 0]) / 3.0
        dy = (V[tT[0], 1] + V[tT[1], 1] + V[tT[2], 1]) / 3.0
        rK = 0.0
        rT = 0.0
        for i in range(3):
            rK = max(rK, np.hypot(V[tK[i], 0] - cx, V[tK[i], 1] - cy))
            rT = max(rT, np.hypot(V[tT[i], 0] - dx, V[tT[i], 1] - dy))
        lower = np.hypot(cx - dx, cy - dy) - rK - rT
        if lower >= cutoff:
            order = far_order
        else:
            d = tri_tri_distance(V, tK, tT)
            order = far_order if d >= cutoff else _lookup(near_k, cutoff, d)
        T1 = np.empty((3, 3))
        T2 = np.empty((3, 3))
        X = np.empty((3, 3))
        separated_pair(V, tK, tT, order, tp, tw, tn, s, T1, T2, X)
        for a in range(3):
            for b in range(3):
                blk[a, b] = 2.0 * T1[a, b]
                blk[3 + a, 3 + b] = 2.0 * T2[a, b]
                blk[a, 3 + b] = -2.0 * X[a, b]
                blk[3 + b, a] = -2.0 * X[a, b]
        return 6, verts, order
    nloc = 6 - c if c < 3 else 3
    xs = np.empty((nloc, 2))
    for k in range(nloc):
        xs[k, 0] = V[verts[k], 0]
        xs[k, 1] = V[verts[k], 1]
    scale = 4.0 * _tri_area(V, tK[0], tK[1], tK[2]) * _tri_area(V, tT[0], tT[1], tT[2])
    if c == 3:
        touching_pair(xs, nloc, w3, p3, s, blk)
    else:
        scale *= 2.0
        if c == 2:
            touching_pair(xs, nloc, w2, p2, s, blk)
        else:
            touching_pair(xs, nloc, w1, p1, s, blk)
    for a in range(nloc):
        for b in range(nloc):
            blk[a, b] *= scale
    return nloc, verts, 0


@njit(cache=True)
def element_circles(V, T):
    """Centroids and the largest centroid-vertex distance of every element."""
    nt = T.shape[0]
    cen = np.empty((nt, 2))
    rad = np.empty(nt)
    for i in range(nt):
        cx = (V[T[i, 0], 0] + V[T[i, 1], 0] + V[T[i, 2], 0]) / 3.0
        cy = (V[T[i, 0], 1] + V[T[i, 1], 1] + V[T[i, 2], 1]) / 3.0
        r = 0.0
        for k in range(3):
            r = max(r, np.hypot(V[T[i, k], 0] - cx, V[T[i, k], 1] - cy))
        cen[i, 0] = cx
        cen[i, 1] = cy
        rad[i] = r
    return cen, rad


@njit(cache=True)
def _n_shared(tK, tT):
    c = 0
    for i in range(3):
        for j in range(3):
            if tK[i] == tT[j]:
                c += 1
    return c


@njit(cache=True)
def dense_pairs(V, T, dof, s, tp, tw, tn, near_k, cutoff, far_order,
                w1, p1, w2, p2, w3, p3, A):
    """Accumulate every unordered element pair into the dense matrix A."""
    nt = T.shape[0]
    blk = np.zeros((6, 6))
    cen, rad = element_circles(V, T)
    T1 = np.empty((3, 3))
    T2 = np.empty((3, 3))
    X = np.empty((3, 3))
    scratch = np.empty((tn.max(), 8))
    for i in range(nt):
        tK = T[i]
        for j in range(i, nt):
            tT = T[j]
            if _n_shared(tK, tT) == 0:
                lower = np.hypot(cen[i, 0] - cen[j, 0], cen[i, 1] - cen[j, 1]) - rad[i] - rad[j]
                if lower >= cutoff:
                    order = far_order
                else:
                    d = tri_tri_distance(V, tK, tT)
                    order = far_order if d >= cutoff else _lookup(near_k, cutoff, d)
                separated_pair_into(V, tK, tT, order, tp, tw, tn, s, T1, T2, X, scratch)
                for a in range(3):
                    ia = dof[tK[a]]
                    ja = dof[tT[a]]
                    for b in range(3):
                        ib = dof[tK[b]]
                        jb = dof[tT[b]]
                        if ia >= 0 and ib >= 0:
                            A[ia, ib] += 2.0 * T1[a, b]
                        if ja >= 0 and jb >= 0:
                            A[ja, jb] += 2.0 * T2[a, b]
                        if ia >= 0 and jb >= 0:
                            A[ia, jb] -= 2.0 * X[a, b]
                            A[jb, ia] -= 2.0 * X[a, b]
                continue
            nloc, verts, _ = pair_block(V, tK, tT, s, tp, tw, tn, near_k, cutoff,
                                        far_order, w1, p1, w2, p2, w3, p3, blk)
            for a in range(nloc):
                ia = dof[verts[a]]
                if ia < 0:
                    continue
                for b in range(nloc):
                    ib = dof[verts[b]]
                    if ib >= 0:
                        A[ia, ib] += blk[a, b]


# ---------------------------------------------------------------------------
# element / boundary-edge integrals
# ---------------------------------------------------------------------------

@njit(cache=True)
def separated_edge(V, t, p, q, nx, ny, order_t, order_e, tp, tw, tn, sp, sw, sn, s, out):
    """out[a,b] = int_K lam_a lam_b(x) int_e n.(x-y) |x-y|^(-2-2s) dy dx."""
    n = tn[order_t]
    P = tp[order_t]
    XK = np.empty((n, 2))
    WK = np.empty(n)
    _map_rule(V, t, P, tw[order_t], n, XK, WK)
    ne = sn[order_e]
    L = np.hypot(V[q, 0] - V[p, 0], V[q, 1] - V[p, 1])
    for a in range(3):
        for b in range(3):
            out[a, b] = 0.0
    expo = -1.0 - s
    for i in range(n):
        acc = 0.0
        for k in range(ne):
            tt = sp[order_e, k]
            yx = V[p, 0] + tt * (V[q, 0] - V[p, 0])
            yy = V[p, 1] + tt * (V[q, 1] - V[p, 1])
            dx = XK[i, 0] - yx
            dy = XK[i, 1] - yy
            acc += sw[order_e, k] * L * (nx * dx + ny * dy) * (dx * dx + dy * dy) ** expo
        l0 = 1.0 - P[i, 0] - P[i, 1]
        lam = (l0, P[i, 0], P[i, 1])
        f = WK[i] * acc
        for a in range(3):
            for b in range(a, 3):
                out[a, b] += f * lam[a] * lam[b]
    for a in range(3):
        for b in range(a):
            out[a, b] = out[b, a]


@njit(cache=True)
def touching_edge(xs, nloc, w, psi, phi, nx, ny, s, out):
    """sum_q w_q phi_a phi_b (n.z) |z|^(-2-2s), z = sum_k psi_k x_k; a, b < 3."""
    for a in range(3):
        for b in range(3):
            out[a, b] = 0.0
    expo = -1.0 - s
    for q in range(w.shape[0]):
        zx = 0.0
        zy = 0.0
        for k in range(nloc):
            zx += psi[q, k] * xs[k, 0]
            zy += psi[q, k] * xs[k, 1]
        f = w[q] * (nx * zx + ny * zy) * (zx * zx + zy * zy) ** expo
        for a in range(3):
            for b in range(a, 3):
                out[a, b] += f * phi[q, a] * phi[q, b]
    for a in range(3):
        for b in range(a):
            out[a, b] = out[b, a]


@njit(cache=True)
def edge_block(V, t, p, q, s, tp, tw, tn, sp, sw, sn, near_kb, cutoff, far_order_b,
               we1, pe1, fe1, we2, pe2, fe2, blk):
    """Element/edge integral with the inward normal of (p, q).

    Returns the local vertex order of K used in blk[:3, :3].
    """
    L = np.hypot(V[q, 0] - V[p, 0], V[q, 1] - V[p, 1])
    nx = -(V[q, 1] - V[p, 1]) / L
    ny = (V[q, 0] - V[p, 0]) / L
    c = 0
    for i in range(3):
        if t[i] == p or t[i] == q:
            c += 1
    loc = np.empty(3, dtype=np.int64)
    if c == 0:
        for i in range(3):
            loc[i] = t[i]
        cx = (V[t[0], 0] + V[t[1], 0] + V[t[2], 0]) / 3.0
        cy = (V[t[0], 1] + V[t[1], 1] + V[t[2], 1]) / 3.0
        r = 0.0
        for i in range(3):
            r = max(r, np.hypot(V[t[i], 0] - cx, V[t[i], 1] - cy))
        mx = 0.5 * (V[p, 0] + V[q, 0])
        my = 0.5 * (V[p, 1] + V[q, 1])
        lower = np.hypot(cx - mx, cy - my) - r - 0.5 * L
        if lower >= cutoff:
            order = far_order_b
        else:
            d = tri_edge_distance(V, t, p, q)
            order = far_order_b if d >= cutoff else _lookup(near_kb, cutoff, d)
        separated_edge(V, t, p, q, nx, ny, order, order, tp, tw, tn, sp, sw, sn, s, blk)
        return loc
    area = _tri_area(V, t[0], t[1], t[2])
    if c == 2:
        other = -1
        for i in range(3):
            if t[i] != p and t[i] != q:
                other = t[i]
        loc[0] = p
        loc[1] = q
        loc[2] = other
        xs = np.empty((3, 2))
        for k in range(3):
            xs[k, 0] = V[loc[k], 0]
            xs[k, 1] = V[loc[k], 1]
        touching_edge(xs, 3, we2, pe2, fe2, nx, ny, s, blk)
    else:
        shared = p
        far_end = q
        for i in range(3):
            if t[i] == q:
                shared = q
                far_end = p
        loc[0] = shared
        m = 1
        for i in range(3):
            if t[i] != shared:
                loc[m] = t[i]
                m += 1
        xs = np.empty((4, 2))
        for k in range(3):
            xs[k, 0] = V[loc[k], 0]
            xs[k, 1] = V[loc[k], 1]
        xs[3, 0] = V[far_end, 0]
        xs[3, 1] = V[far_end, 1]
        touching_edge(xs, 4, we1, pe1, fe1, nx, ny, s, blk)
    scale = 2.0 * area * L
    for a in range(3):
        for b in range(3):
            blk[a, b] *= scale
    return loc


@njit(cache=True)
def dense_edges(V, T, E, dof, s, tp, tw, tn, sp, sw, sn, near_kb, cutoff, far_order_b,
                we1, pe1, fe1, we2, pe2, fe2, factor, A):
    """Accumulate factor * (element, edge) integrals for every K and every edge in E."""
    blk = np.zeros((6, 6))
    for i in range(T.shape[0]):
        t = T[i]
        if dof[t[0]] < 0 and dof[t[1]] < 0 and dof[t[2]] < 0:
            continue
        for e in range(E.shape[0]):
            loc = edge_block(V, t, E[e, 0], E[e, 1], s, tp, tw, tn, sp, sw, sn, near_kb,
                             cutoff, far_order_b, we1, pe1, fe1, we2, pe2, fe2, blk)
            for a in range(3):
                ia = dof[loc[a]]
                if ia < 0:
                    continue
                for b in range(3):
                    ib = dof[loc[b]]
                    if ib >= 0:
                        A[ia, ib] += factor * blk[a, b]


# ---------------------------------------------------------------------------
# hierarchical operator: near field
# ---------------------------------------------------------------------------

@njit(cache=True)
def separated_cross(V, tK, tT, order, tp, tw, tn, s, X, scratch):
    """X[a,b] = int_K int_T lam_a(x) mu_b(y) |x-y|^(-2-2s) only."""
    n = tn[order]
    P = tp[order]
    XK = scratch[:, 0:2]
    XT = scratch[:, 2:4]
    WK = scratch[:, 4]
    WT = scratch[:, 5]
    _map_rule(V, tK, P, tw[order], n, XK, WK)
    _map_rule(V, tT, P, tw[order], n, XT, WT)
    for a in range(3):
        for b in range(3):
            X[a, b] = 0.0
    expo = -1.0 - s
    for p in range(n):
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for q in range(n):
            dx = XK[p, 0] - XT[q, 0]
            dy = XK[p, 1] - XT[q, 1]
            wk = WT[q] * (dx * dx + dy * dy) ** expo
            acc0 += wk * (1.0 - P[q, 0] - P[q, 1])
            acc1 += wk * P[q, 0]
            acc2 += wk * P[q, 1]
        w = WK[p]
        l0 = w * (1.0 - P[p, 0] - P[p, 1])
        l1 = w * P[p, 0]
        l2 = w * P[p, 1]
        X[0, 0] += l0 * acc0
        X[0, 1] += l0 * acc1
        X[0, 2] += l0 * acc2
        X[1, 0] += l1 * acc0
        X[1, 1] += l1 * acc1
        X[1, 2] += l1 * acc2
        X[2, 0] += l2 * acc0
        X[2, 1] += l2 * acc1
        X[2, 2] += l2 * acc2


@njit(cache=True)
def csr_add(indptr, indices, data, i, j, v):
    lo = indptr[i]
    hi = indptr[i + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        c = indices[mid]
        if c == j:
            data[mid] += v
            return True
        if c < j:
            lo = mid + 1
        else:
            hi = mid - 1
    return False


@njit(cache=True)
def patch_of(T, t, v2t_ptr, v2t_idx, buf):
    """Elements sharing a vertex with element t (sorted, unique) -> count."""
    n = 0
    for k in range(3):
        v = T[t, k]
        for p in range(v2t_ptr[v], v2t_ptr[v + 1]):
            e = v2t_idx[p]
            dup = False
            for r in range(n):
                if buf[r] == e:
                    dup = True
                    break
            if not dup:
                buf[n] = e
                n += 1
    buf[:n].sort()
    return n


@njit(cache=True)
def near_local(V, T, dof, s, v2t_ptr, v2t_idx, tri_bnd, bedges, regional,
               tp, tw, tn, near_k, cutoff, far_order, w1, p1, w2, p2, w3, p3,
               sp, sw, sn, near_kb, cutoff_b, far_order_b,
               we1, pe1, fe1, we2, pe2, fe2,
               indptr, indices, data, c_pair, c_edge):
    """Touching pairs plus the patch-boundary correction of every element.

    tri_bnd[t, k] marks the edge (T[t,k], T[t,k+1]) as lying on the domain
    boundary.  In the regional variant boundary edges of the patch are
    skipped and all other domain-boundary edges are subtracted.
    """
    nt = T.shape[0]
    buf = np.empty(256, dtype=np.int64)
    ea = np.empty(768, dtype=np.int64)
    eb = np.empty(768, dtype=np.int64)
    eflag = np.empty(768, dtype=np.bool_)
    blk = np.zeros((6, 6))
    missed = 0
    for t in range(nt):
        tK = T[t]
        np_ = patch_of(T, t, v2t_ptr, v2t_idx, buf)
        # touching pairs, each unordered pair once (t <= other)
        for r in range(np_):
            o = buf[r]
            if o < t:
                continue
            nloc, verts, _ = pair_block(V, tK, T[o], s, tp, tw, tn, near_k, cutoff,
                                        far_order, w1, p1, w2, p2, w3, p3, blk)
            for a in range(nloc):
                ia = dof[verts[a]]
                if ia < 0:
                    continue
                for b in range(nloc):
                    ib = dof[verts[b]]
                    if ib >= 0:
                        if not csr_add(indptr, indices, data, ia, ib, c_pair * blk[a, b]):
                            missed += 1
        if dof[tK[0]] < 0 and dof[tK[1]] < 0 and dof[tK[2]] < 0:
            continue
        # directed edges of the patch; keep those whose reverse is absent
        ne = 0
        for r in range(np_):
            o = buf[r]
            for k in range(3):
                ea[ne] = T[o, k]
                eb[ne] = T[o, (k + 1) % 3]
                eflag[ne] = tri_bnd[o, k]
                ne += 1
        for k in range(ne):
            rev = False
            for l in range(ne):
                if ea[l] == eb[k] and eb[l] == ea[k]:
                    rev = True
                    break
            if rev:
                continue
            if regional and eflag[k]:
                continue
            loc = edge_block(V, tK, ea[k], eb[k], s, tp, tw, tn, sp, sw, sn, near_kb,
                             cutoff_b, far_order_b, we1, pe1, fe1, we2, pe2, fe2, blk)
            for a in range(3):
                ia = dof[loc[a]]
                if ia < 0:
                    continue
                for b in range(3):
                    ib = dof[loc[b]]
                    if ib >= 0:
                        if not csr_add(indptr, indices, data, ia, ib, c_edge * blk[a, b]):
                            missed += 1
        if regional:
            for e in range(bedges.shape[0]):
                p = bedges[e, 0]
                q = bedges[e, 1]
                inside = False
                for k in range(ne):
                    if ea[k] == p and eb[k] == q:
                        inside = True
                        break
                if inside:
                    continue
                loc = edge_block(V, tK, p, q, s, tp, tw, tn, sp, sw, sn, near_kb,
                                 cutoff_b, far_order_b, we1, pe1, fe1, we2, pe2, fe2, blk)
                for a in range(3):
                    ia = dof[loc[a]]
                    if ia < 0:
                        continue
                    for b in range(3):
                        ib = dof[loc[b]]
                        if ib >= 0:
                            if not csr_add(indptr, indices, data, ia, ib, -c_edge * blk[a, b]):
                                missed += 1
    return missed


# ---------------------------------------------------------------------------
# hierarchical operator: far field
# ---------------------------------------------------------------------------

@njit(cache=True)
def far_matvec(x, order_up, parent, Sx, Sy, W, dof_node,
               far_sig, far_tau, Kmat, m):
    """Far-field product without the -C factor.

    ``order_up`` lists active clusters children-first; ``parent[c]`` is -1 for
    the root.  ``Sx[c]``/``Sy[c]`` hold L_parent(xi_child) per axis.  Each DoF
    belongs to the leaf-set cluster ``dof_node[i]`` with moments ``W[i]``.
    """
    na = parent.shape[0]
    M = np.zeros((na, m, m))
    L = np.zeros((na, m, m))
    tmp = np.empty((m, m))
    for i in range(x.shape[0]):
        c = dof_node[i]
        xi = x[i]
        for a in range(m):
            for b in range(m):
                M[c, a, b] += W[i, a, b] * xi
    for k in range(na):
        c = order_up[k]
        p = parent[c]
        if p < 0:
            continue
        # M_p += Sx M_c Sy^T
        for a in range(m):
            for b in range(m):
                acc = 0.0
                for q in range(m):
                    acc += M[c, a, q] * Sy[c, b, q]
                tmp[a, b] = acc
        for a in range(m):
            for b in range(m):
                acc = 0.0
                for q in range(m):
                    acc += Sx[c, a, q] * tmp[q, b]
                M[p, a, b] += acc
    mm = m * m
    for f in range(far_sig.shape[0]):
        sg = far_sig[f]
        ta = far_tau[f]
        Ms = M[sg].reshape(mm)
        Mt = M[ta].reshape(mm)
        Ls = L[sg].reshape(mm)
        Lt = L[ta].reshape(mm)
        Kf = Kmat[f]
        for a in range(mm):
            acc = 0.0
            for b in range(mm):
                acc += Kf[a, b] * Mt[b]
            Ls[a] += acc
        for b in range(mm):
            acc = 0.0
            for a in range(mm):
                acc += Kf[a, b] * Ms[a]
            Lt[b] += acc
    for k in range(na - 1, -1, -1):
        c = order_up[k]
        p = parent[c]
        if p < 0:
            continue
        # L_c += Sx^T L_p Sy
        for a in range(m):
            for b in range(m):
                acc = 0.0
                for q in range(m):
                    acc += L[p, a, q] * Sy[c, q, b]
                tmp[a, b] = acc
        for a in range(m):
            for b in range(m):
                acc = 0.0
                for q in range(m):
                    acc += Sx[c, q, a] * tmp[q, b]
                L[c, a, b] += acc
    y = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        c = dof_node[i]
        acc = 0.0
        for a in range(m):
            for b in range(m):
                acc += W[i, a, b] * L[c, a, b]
        y[i] = acc
    return y


@njit(cache=True)
def near_cross_elements(V, T, dof, vdof, s, tp, tw, tn, near_k, cutoff, far_order,
                        v2t_ptr, v2t_idx, indptr, indices, data, scale):
    """Add scale * X_ij on the sparsity pattern, each element pair once.

    For element K the candidates are the elements around the pattern columns
    of K's DoFs; only candidates with a larger index are visited, the
    symmetric entry receives the same value.
    """
    nt = T.shape[0]
    cen, rad = element_circles(V, T)
    mark = np.full(nt, -1, dtype=np.int64)
    cand = np.empty(nt, dtype=np.int64)
    X = np.empty((3, 3))
    scratch = np.empty((tn.max(), 8))
    for i in range(nt):
        tK = T[i]
        cnt = 0
        for a in range(3):
            ia = dof[tK[a]]
            if ia < 0:
                continue
            for p in range(indptr[ia], indptr[ia + 1]):
                v = vdof[indices[p]]
                for r in range(v2t_ptr[v], v2t_ptr[v + 1]):
                    e = v2t_idx[r]
                    if e > i and mark[e] != i:
                        mark[e] = i
                        cand[cnt] = e
                        cnt += 1
        for r in range(cnt):
            j = cand[r]
            tT = T[j]
            if _n_shared(tK, tT) > 0:
                continue
            lower = np.hypot(cen[i, 0] - cen[j, 0], cen[i, 1] - cen[j, 1]) - rad[i] - rad[j]
            if lower >= cutoff:
                order = far_order
            else:
                d = tri_tri_distance(V, tK, tT)
                order = far_order if d >= cutoff else _lookup(near_k, cutoff, d)
            separated_cross(V, tK, tT, order, tp, tw, tn, s, X, scratch)
            for a in range(3):
                ia = dof[tK[a]]
                if ia < 0:
                    continue
                for c in range(3):
                    jb = dof[tT[c]]
                    if jb < 0:
                        continue
                    v = scale * X[a, c]
                    if csr_add(indptr, indices, data, ia, jb, v):
                        csr_add(indptr, indices, data, jb, ia, v)
