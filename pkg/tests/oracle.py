"""Brute-force reference integrals for element pairs and element/edge pairs.

Independent of the collapsed-coordinate tables: the double integral is written
in the difference variable z = x - y,

    int_K int_T F(x, y) k(x - y) = int_{R^2} k(z) int_{K cap (T + z)} F(x, x - z) dx dz,

and z is taken in polar coordinates.  For a fixed direction the inner integral
is a piecewise polynomial of degree <= 4 in the radius (the clipped polygon has
vertices moving linearly in r), so the radial integral is done exactly piece
by piece after fitting that polynomial.  The angular integral is adaptive with
bisection, started from the directions where the piece structure changes.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import roots_legendre

_CHEB_FIT = 0.5 * (1.0 - np.cos(np.pi * (np.arange(7) + 0.5) / 7))
_x, _w = roots_legendre(10)
_GL10 = ((_x + 1) / 2, _w / 2)


def _bary_rows(tri):
    inv = np.linalg.inv(np.vstack([tri.T, np.ones(3)]))
    # lambda = inv @ [x, y, 1]
    return inv


def clip_convex(poly: list, a: np.ndarray, b: float) -> list:
    """Keep the part of ``poly`` with a . x <= b."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = a @ p - b, a @ q - b
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return out


def halfplanes(tri: np.ndarray):
    """Outward (a, b) pairs with tri = {a . x <= b}."""
    orient = np.sign((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
                     - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0]))
    hp = []
    for i in range(3):
        p, q = tri[i], tri[(i + 1) % 3]
        d = q - p
        a = orient * np.array([d[1], -d[0]])
        hp.append((a, float(a @ p)))
    return hp


def _poly_quadrature(poly: list):
    """Degree-2-exact points/weights on a convex polygon (fan + edge midpoints)."""
    pts, wts = [], []
    for i in range(1, len(poly) - 1):
        a, b, c = poly[0], poly[i], poly[i + 1]
        area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area == 0.0:
            continue
        for p in ((a + b) / 2, (b + c) / 2, (c + a) / 2):
            pts.append(p)
            wts.append(area / 3)
    return pts, wts


class _Pair:
    def __init__(self, xs, K, T, s):
        self.xs = np.asarray(xs, float)
        self.K = list(K)
        self.T = list(T)
        self.s = s
        self.nloc = len(self.xs)
        self.triK = self.xs[self.K]
        self.triT = self.xs[self.T]
        self.hpK = halfplanes(self.triK)
        self.hpT = halfplanes(self.triT)
        self.bK = self._affine(self.K)
        self.bT = self._affine(self.T)

    def _affine(self, tri_idx):
        inv = _bary_rows(self.xs[tri_idx])
        rows = np.zeros((self.nloc, 3))
        for k, v in enumerate(tri_idx):
            rows[v] = inv[k]
        return rows

    def overlap_integral(self, z):
        """Vector over (a, b) of int_{K cap (T+z)} F(x, x - z) dx."""
        poly = [p.copy() for p in self.triK]
        for a, b in self.hpT:
            poly = clip_convex(poly, a, b + a @ z)
            if len(poly) < 3:
                return np.zeros((self.nloc, self.nloc))
        pts, wts = _poly_quadrature(poly)
        if not pts:
            return np.zeros((self.nloc, self.nloc))
        X = np.array(pts)
        w = np.array(wts)
        Y = X - z
        ux = self.bK[:, :2] @ X.T + self.bK[:, 2:3]
        uy = self.bT[:, :2] @ Y.T + self.bT[:, 2:3]
        d = ux - uy
        return (d * w) @ d.T

    def events(self, omega):
        """Radii where a vertex crosses an edge line of the other triangle."""
        ev = []
        for a, b in self.hpK:  # vertices of T + r omega hitting lines of K
            den = a @ omega
            if abs(den) > 1e-15:
                for w in self.triT:
                    ev.append((b - a @ w) / den)
        for a, b in self.hpT:  # vertices of K hitting lines of T + r omega
            den = a @ omega
            if abs(den) > 1e-15:
                for v in self.triK:
                    ev.append((a @ v - b) / den)
        return ev

    def rmax(self):
        return max(np.linalg.norm(p - q) for p in self.triK for q in self.triT)

    def directions(self):
        dirs = []
        for tri in (self.triK, self.triT):
            for i in range(3):
                d = tri[(i + 1) % 3] - tri[i]
                dirs.append(math.atan2(d[1], d[0]))
                dirs.append(math.atan2(-d[1], -d[0]))
        for p in self.triK:
            for q in self.triT:
                d = p - q
                if np.linalg.norm(d) > 1e-14:
                    dirs.append(math.atan2(d[1], d[0]))
        return dirs


class _EdgePair:
    """x in K, y on the edge (p, q); integrand lambda_a lambda_b(x) n.(x-y) k."""

    def __init__(self, tri, p, q, normal, s):
        self.triK = np.asarray(tri, float)
        self.p = np.asarray(p, float)
        self.q = np.asarray(q, float)
        self.n = np.asarray(normal, float)
        self.s = s
        self.hpK = halfplanes(self.triK)
        self.inv = _bary_rows(self.triK)
        self.length = float(np.linalg.norm(self.q - self.p))
        self.nloc = 3

    def overlap_integral(self, z):
        # parametrize y = p + t (q - p); need y + z in K
        lo, hi = 0.0, 1.0
        d = self.q - self.p
        for a, b in self.hpK:
            c0 = a @ (self.p + z) - b
            c1 = a @ d
            if abs(c1) < 1e-15:
                if c0 > 0:
                    return np.zeros((3, 3))
                continue
            t = -c0 / c1
            if c1 > 0:
                hi = min(hi, t)
            else:
                lo = max(lo, t)
        if hi <= lo:
            return np.zeros((3, 3))
        g = np.array([-1.0, 1.0]) / math.sqrt(3.0)
        ts = lo + (hi - lo) * (g + 1) / 2
        w = np.full(2, (hi - lo) / 2 * self.length)
        X = self.p + np.outer(ts, d) + z
        lam = self.inv[:, :2] @ X.T + self.inv[:, 2:3]
        return (lam * w) @ lam.T

    def events(self, omega):
        ev = []
        d = self.q - self.p
        for a, b in self.hpK:  # segment end points (moving) hitting lines of K
            den = a @ omega
            if abs(den) > 1e-15:
                for e in (self.p, self.q):
                    ev.append((b - a @ e) / den)
        nrm = np.array([d[1], -d[0]])
        den = nrm @ omega
        if abs(den) > 1e-15:
            for v in self.triK:  # vertices of K hitting the moving edge line
                ev.append((nrm @ (v - self.p)) / den)
        return ev

    def rmax(self):
        return max(np.linalg.norm(v - e) for v in self.triK for e in (self.p, self.q))

    def directions(self):
        dirs = []
        segs = [(self.triK[i], self.triK[(i + 1) % 3]) for i in range(3)] + [(self.p, self.q)]
        for a, b in segs:
            d = b - a
            dirs += [math.atan2(d[1], d[0]), math.atan2(-d[1], -d[0])]
        for v in self.triK:
            for e in (self.p, self.q):
                d = v - e
                if np.linalg.norm(d) > 1e-14:
                    dirs.append(math.atan2(d[1], d[0]))
        return dirs


def _radial(pair, omega, power, vanish):
    """int_0^inf r^power G(r omega) dr, G piecewise polynomial of degree <= 4.

    On the first piece G is fitted exactly and integrated term by term,
    dropping the ``vanish`` lowest coefficients, which are zero by
    construction.  Later pieces stay away from r = 0 and are split into
    sub-pieces of ratio <= 2 with a 10 point Gauss rule.
    """
    n = pair.nloc
    rm = pair.rmax() * (1 + 1e-12)
    ev = sorted({r for r in pair.events(omega) if 1e-13 < r < rm})
    knots = [0.0] + ev + [rm]
    total = np.zeros((n, n))
    b = knots[1]
    vals = np.array([pair.overlap_integral(b * t * omega) for t in _CHEB_FIT])
    if np.any(vals):
        V = np.vander(_CHEB_FIT, len(_CHEB_FIT), increasing=True)
        coef = np.linalg.solve(V, vals.reshape(len(_CHEB_FIT), -1))
        for k in range(vanish, len(_CHEB_FIT)):
            total += (coef[k] * b ** (power + 1) / (k + power + 1)).reshape(n, n)
    for a, b in zip(knots[1:-1], knots[2:]):
        if b - a < 1e-15:
            continue
        cuts = [a]
        while cuts[-1] * 2 < b:
            cuts.append(cuts[-1] * 2)
        cuts.append(b)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            rs = lo + (hi - lo) * _GL10[0]
            ws = (hi - lo) * _GL10[1]
            for r, w in zip(rs, ws):
                total += w * r ** power * pair.overlap_integral(r * omega)
    return total


def _angular(f, breaks, tol):
    xg, wg = roots_legendre(12)
    xh, wh = roots_legendre(24)

    def rule(a, b, x, w):
        t = a + (b - a) * (x + 1) / 2
        return sum(wi * f(ti) for ti, wi in zip(t, w)) * (b - a) / 2

    total = 0.0
    stack = [(a, b, 0) for a, b in zip(breaks[:-1], breaks[1:]) if b - a > 1e-14]
    while stack:
        a, b, depth = stack.pop()
        lo = rule(a, b, xg, wg)
        hi = rule(a, b, xh, wh)
        err = np.max(np.abs(hi - lo))
        if err <= tol * (b - a) / (2 * math.pi) or depth > 12:
            total = total + hi
        else:
            m = 0.5 * (a + b)
            stack += [(a, m, depth + 1), (m, b, depth + 1)]
    return total


def _breaks(dirs):
    th = sorted({(d + 2 * math.pi) % (2 * math.pi) for d in dirs} | {0.0, 2 * math.pi})
    out = [th[0]]
    for t in th[1:]:
        if t - out[-1] > 1e-13:
            out.append(t)
    return out


def element_pair(xs, K, T, s, tol=1e-11):
    """Matrix over all local vertices of
    int_K int_T (Phi_a(x) - Phi_a(y)) (Phi_b(x) - Phi_b(y)) |x - y|^(-2-2s),
    where Phi_a is the piecewise-affine hat function of local vertex a.
    No normalisation constant is applied."""
    pair = _Pair(xs, K, T, s)
    f = lambda th: _radial(pair, np.array([math.cos(th), math.sin(th)]), -1 - 2 * s, 2)
    return _angular(f, _breaks(pair.directions()), tol)


def element_edge(tri, p, q, normal, s, vanish=0, tol=1e-11):
    """3x3 matrix of int_K int_e lambda_a lambda_b(x) n.(x - y) |x - y|^(-2-2s).

    ``vanish`` is the order of vanishing at r = 0 of the inner integral (use 2
    for the interior-vertex entry when s >= 1/2)."""
    pair = _EdgePair(tri, p, q, normal, s)
    nvec = pair.n

    def f(th):
        om = np.array([math.cos(th), math.sin(th)])
        return (nvec @ om) * _radial(pair, om, -2 * s, vanish)

    return _angular(f, _breaks(pair.directions()), tol)
