"""Quadrature rules and singularity-lifting coefficient tables.

Three groups of objects live here:

* Gauss rules on the reference triangle (conical product of Gauss-Jacobi and
  Gauss-Legendre points) and on unit hyper-cubes.
* The coefficient tables used to map touching element pairs (and element /
  edge pairs) onto hyper-cubes.  They are stored as plain polynomial data so
  that the Python evaluators and the compiled assembly kernels share a single
  source.
* Order selection for touching and separated pairs as a function of mesh size.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_ORDER = 30
MIN_PLANNED_ORDER = 2


class SingularityError(ValueError):
    """Raised when a requested integrand cannot be integrated by design."""


# ---------------------------------------------------------------------------
# 1D building blocks
# ---------------------------------------------------------------------------

def points_for_order(order: int) -> int:
    """Number of Gauss points needed for exactness of degree ``order``."""
    return (int(order) + 2) // 2


@lru_cache(maxsize=None)
def gauss_legendre_01(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``npts`` points on [0, 1]."""
    x, w = roots_legendre(npts)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_jacobi_01(npts: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] for the weight ``t**a * (1 - t)**b``.

    Requires ``a > -1`` and ``b > -1``.
    """
    if a <= -1.0 or b <= -1.0:
        raise SingularityError(f"weight t^{a}(1-t)^{b} is not integrable")
    if a == 0.0 and b == 0.0:
        return gauss_legendre_01(npts)
    # scipy's weight is (1 - x)^alpha (1 + x)^beta on [-1, 1]
    x, w = roots_jacobi(npts, b, a)
    t = 0.5 * (x + 1.0)
    w = w * 0.5 ** (a + b + 1.0)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


# ---------------------------------------------------------------------------
# Gauss rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussRule:
    """Nodes and positive weights on a reference domain.

    ``nodes`` has shape (npts, dim); ``order`` is the polynomial degree that is
    integrated exactly (total degree on the triangle, per coordinate on cubes).
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def npts(self) -> int:
        return len(self.weights)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _check_order(order: int) -> int:
    order = int(order)
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"quadrature order must lie in [1, {MAX_ORDER}], got {order}")
    return order


@lru_cache(maxsize=None)
def simplex_gauss(order: int) -> GaussRule:
    """Conical product rule on the triangle {x, y >= 0, x + y <= 1}.

    The collapsed coordinates are x = u, y = (1 - u) v; the Jacobian (1 - u)
    is absorbed in a Gauss-Jacobi rule in u.  The rule has
    ceil((order + 1) / 2)^2 nodes and total measure 1/2.
    """
    order = _check_order(order)
    n = points_for_order(order)
    u, wu = gauss_jacobi_01(n, 0.0, 1.0)
    v, wv = gauss_legendre_01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    nodes = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    weights = np.outer(wu, wv).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussRule(nodes, weights, order)


@lru_cache(maxsize=None)
def hypercube_gauss(order: int, dim: int) -> GaussRule:
    """Tensor Gauss-Legendre rule on [0, 1]^dim, dim in 1..4."""
    order = _check_order(order)
    if dim not in (1, 2, 3, 4):
        raise ValueError(f"hyper-cube dimension must be 1..4, got {dim}")
    x, w = gauss_legendre_01(points_for_order(order))
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids]), axis=0)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussRule(nodes, weights, order)


def interval_gauss(order: int) -> GaussRule:
    return hypercube_gauss(order, 1)


# ---------------------------------------------------------------------------
# Polynomial data for the coefficient tables
# ---------------------------------------------------------------------------

_TERM = re.compile(r"([+-]?)\s*([^+-]+)")


@dataclass(frozen=True)
class Poly:
    """Polynomial in eta_0..eta_3 given as (coefficient, exponents) terms."""

    terms: tuple[tuple[float, tuple[int, int, int, int]], ...]
    text: str = ""

    @staticmethod
    def parse(text: str) -> "Poly":
        src = text.replace(" ", "")
        if not src or src == "0":
            return Poly((), text)
        terms = []
        for sign, body in _TERM.findall(src):
            coef = -1.0 if sign == "-" else 1.0
            exps = [0, 0, 0, 0]
            for factor in body.split("*"):
                if factor.startswith("e"):
                    name, _, power = factor.partition("^")
                    exps[int(name[1:])] += int(power) if power else 1
                else:
                    coef *= float(factor)
            terms.append((coef, tuple(exps)))
        return Poly(tuple(terms), text)

    def __call__(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        out = np.zeros(eta.shape[0])
        for coef, exps in self.terms:
            val = np.full(eta.shape[0], coef)
            for dim, e in enumerate(exps):
                if e:
                    val = val * eta[:, dim] ** e
            out += val
        return out

    @property
    def dims(self) -> frozenset[int]:
        return frozenset(d for _, exps in self.terms for d, e in enumerate(exps) if e)


@dataclass(frozen=True)
class JacobianMonomial:
    """coef * prod_d eta_d^(a_d + b_d s) * (1 - eta_d)^(c_d)."""

    powers: tuple[tuple[float, float], ...]
    one_minus: tuple[int, ...] = (0, 0, 0, 0)
    coef: float = 1.0

    def exponent(self, dim: int, s: float) -> float:
        a, b = self.powers[dim]
        return a + b * s

    def __call__(self, eta: np.ndarray, s: float) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        out = np.full(eta.shape[0], self.coef)
        for dim in range(len(self.powers)):
            e = self.exponent(dim, s)
            if e:
                out = out * eta[:, dim] ** e
            if self.one_minus[dim]:
                out = out * (1.0 - eta[:, dim]) ** self.one_minus[dim]
        return out


def _jac(*powers, one_minus=(0, 0, 0, 0)) -> JacobianMonomial:
    padded = tuple(powers) + ((0.0, 0.0),) * (4 - len(powers))
    return JacobianMonomial(padded, tuple(one_minus))


def _polys(rows: Sequence[Sequence[str]]) -> tuple[tuple[Poly, ...], ...]:
    return tuple(tuple(Poly.parse(t) for t in row) for row in rows)


# Element-element tables, one row of barycentric differences per sub-integral.
# Local numbering: identical element (0,1,2); shared edge K=(0,1,2),
# K~=(0,1,3); shared vertex K=(0,1,2), K~=(0,3,4).
_EE_PSI = {
    3: [
        ("-e3", "e3-1", "1"),
        ("-1", "1-e3", "e3"),
        ("e3", "-1", "1-e3"),
    ],
    2: [
        ("-e2", "1-e3", "e3", "e2-1"),
        ("-e2*e3", "e2-1", "1", "e2*e3-e2"),
        ("e2", "e2*e3-1", "1-e2", "-e2*e3"),
        ("e2*e3", "1-e2", "e2-e2*e3", "-1"),
        ("e2*e3", "e2-1", "1-e2*e3", "-e2"),
    ],
    1: [
        ("e2-1", "1-e1", "e1", "e2*e3-e2", "-e2*e3"),
        ("1-e2", "e2-e2*e3", "e2*e3", "e1-1", "-e1"),
    ],
}

_EE_JAC = {
    3: [_jac((3, -2), (2, -2), (1, -2))] * 3,
    2: [_jac((3, -2), (2, -2))] + [_jac((3, -2), (2, -2), (1, 0))] * 4,
    1: [_jac((3, -2), (0, 0), (1, 0))] * 2,
}

# Element-edge tables.  Shape functions refer to the vertices of K only; the
# last column of the shared-vertex case belongs to the far end of the edge,
# where every shape function of K vanishes.
# Local numbering: edge of K -> K=(0,1,2), e=(0,1); shared vertex ->
# K=(0,1,2), e=(0,3).
_EDGE_PSI = {
    2: [
        ("-1", "1-e1", "e1"),
        ("-e1", "e1-1", "1"),
        ("1-e1", "-1", "e1"),
    ],
    1: [
        ("e2-1", "1-e1", "e1", "-e2"),
        ("1-e1", "e1-e1*e2", "e1*e2", "-1"),
    ],
}

_EDGE_PHI = {
    2: [
        ("1-e0-e2+e0*e2", "e0+e2-e0*e1-e0*e2", "e0*e1"),
        ("1-e0-e2+e0*e2", "e2-e0*e2", "e0"),
        ("1-e2+e0*e2-e0*e1", "e2-e0*e2", "e0*e1"),
    ],
    # reconstructed from the collapsed coordinates of the two sub-domains
    1: [
        ("1-e0", "e0-e0*e1", "e0*e1", "0"),
        ("1-e0*e1", "e0*e1-e0*e1*e2", "e0*e1*e2", "0"),
    ],
}

# Second shape function of the first edge sub-integral exactly as printed in
# the source listing.  Its terms do not sum to one with the other two entries;
# kept for the regression test that documents the discrepancy.
LITERAL_EDGE_PHI_1_2 = "e0+e2-e0*e1-e0*e1"

_EDGE_JAC = {
    2: [_jac((-0.0, -2), one_minus=(1, 0, 0, 0))] * 3,
    1: [_jac((1, -2)), _jac((1, -2), (1, 0))],
}

# Interior-only variant of the edge-of-K case: one shape function (local 2)
# with a factor eta_0 pulled into the Jacobian from each of the two copies.
_EDGE_INTERIOR_PHI = ["e1", "1", "e1"]
_EDGE_INTERIOR_JAC = [_jac((2, -2), one_minus=(1, 0, 0, 0))] * 3


@dataclass(frozen=True)
class DuffyTable:
    """Coefficient table of the sub-integrals for one touching configuration.

    ``psi[l][k]`` are the barycentric differences, ``jacobian[l]`` the lifted
    Jacobians and, for element-edge pairs, ``phi[l][k]`` the shape functions
    of K in the collapsed coordinates.  ``dofs`` lists the local indices for
    which the table may be used (all of them unless ``interior_only``).
    """

    kind: str
    c: int
    dim: int
    psi: tuple[tuple[Poly, ...], ...]
    jacobian: tuple[JacobianMonomial, ...]
    phi: tuple[tuple[Poly, ...], ...] | None = None
    interior_only: bool = False
    dofs: tuple[int, ...] = field(default=())
    # the identical-element listing covers one of the two halves of K x K
    # related by exchanging x and y
    symmetry_factor: float = 1.0

    @property
    def n_sub(self) -> int:
        return len(self.psi)

    @property
    def n_local(self) -> int:
        return len(self.psi[0])

    def psi_values(self, ell: int, eta: np.ndarray) -> np.ndarray:
        """(npts, n_local) array of barycentric differences."""
        return np.column_stack([p(eta) for p in self.psi[ell]])

    def phi_values(self, ell: int, eta: np.ndarray) -> np.ndarray:
        if self.phi is None:
            raise ValueError("element-element tables carry no shape functions")
        return np.column_stack([p(eta) for p in self.phi[ell]])

    def active_dims(self, ell: int) -> tuple[int, ...]:
        dims: set[int] = set()
        for p in self.psi[ell]:
            dims |= p.dims
        if self.phi is not None:
            for p in self.phi[ell]:
                dims |= p.dims
        return tuple(sorted(dims))


def duffy_table(c: int, kind: str = "element-element", s: float = 0.25,
                boundary_interior_only: bool = False) -> DuffyTable:
    """Return the coefficient table for ``c`` shared vertices.

    ``kind`` is ``"element-element"`` (c in 1..3) or ``"element-edge"``
    (c in 1..2).  For an edge of K and s >= 1/2 only the interior-only table
    exists; asking for the full one raises :class:`SingularityError`.
    """
    if kind == "element-element":
        if c not in _EE_PSI:
            raise ValueError(f"element pairs share 1, 2 or 3 vertices, got c={c}")
        psi = _polys(_EE_PSI[c])
        return DuffyTable(kind, c, 4, psi, tuple(_EE_JAC[c]), None, False,
                          tuple(range(len(psi[0]))), 2.0 if c == 3 else 1.0)
    if kind != "element-edge":
        raise ValueError(f"unknown pair kind {kind!r}")
    if c not in _EDGE_PSI:
        raise ValueError(f"element/edge pairs share 1 or 2 vertices, got c={c}")
    psi = _polys(_EDGE_PSI[c])
    if c == 2 and boundary_interior_only:
        zero = Poly.parse("0")
        phi = tuple((zero, zero, Poly.parse(t)) for t in _EDGE_INTERIOR_PHI)
        return DuffyTable(kind, 2, 3, psi, tuple(_EDGE_INTERIOR_JAC), phi, True, (2,))
    if c == 2 and s >= 0.5:
        raise SingularityError(
            "edge-of-element integrand is not integrable for s >= 1/2 unless "
            "restricted to the interior vertex")
    phi = _polys(_EDGE_PHI[c])
    return DuffyTable(kind, c, 3, psi, tuple(_EDGE_JAC[c]), phi, False, (0, 1, 2))


# camelCase alias
duffyTables = duffy_table


@dataclass(frozen=True)
class PreparedDuffy:
    """A table integrated against a concrete rule: flat node data.

    ``weights`` already contain the Jacobian and the exact integral over the
    dimensions the integrand does not depend on.
    """

    table: DuffyTable
    order: int
    s: float
    weights: np.ndarray
    psi: np.ndarray
    phi: np.ndarray | None
    sub: np.ndarray


def _beta_moment(a: float, b: int) -> float:
    return math.gamma(a + 1.0) * math.gamma(b + 1.0) / math.gamma(a + b + 2.0)


def prepare_duffy(table: DuffyTable, order: int, s: float) -> PreparedDuffy:
    """Collapse the table to a weighted point set.

    Dimensions that only enter the Jacobian are integrated exactly; the others
    get a Gauss-Jacobi rule built from the Jacobian's factor in that variable.
    """
    order = _check_order(order)
    npts = points_for_order(order)
    all_w, all_psi, all_phi, all_sub = [], [], [], []
    for ell in range(table.n_sub):
        jac = table.jacobian[ell]
        active = table.active_dims(ell)
        scale = jac.coef * table.symmetry_factor
        axes = []
        for dim in range(table.dim):
            a = jac.exponent(dim, s)
            b = jac.one_minus[dim]
            if dim in active:
                axes.append(gauss_jacobi_01(npts, a, b))
            else:
                if a <= -1.0:
                    raise SingularityError("Jacobian factor not integrable")
                scale *= _beta_moment(a, b)
        if axes:
            grids = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
            wgrids = np.meshgrid(*[ax[1] for ax in axes], indexing="ij")
            pts = np.column_stack([g.ravel() for g in grids])
            w = np.prod(np.stack([g.ravel() for g in wgrids]), axis=0) * scale
        else:
            pts = np.zeros((1, 0))
            w = np.array([scale])
        eta = np.full((len(w), 4), 0.5)
        for col, dim in enumerate(active):
            eta[:, dim] = pts[:, col]
        all_w.append(w)
        all_psi.append(table.psi_values(ell, eta))
        if table.phi is not None:
            all_phi.append(table.phi_values(ell, eta))
        all_sub.append(np.full(len(w), ell))
    return PreparedDuffy(
        table, order, s,
        np.concatenate(all_w),
        np.vstack(all_psi),
        np.vstack(all_phi) if all_phi else None,
        np.concatenate(all_sub),
    )


# ---------------------------------------------------------------------------
# Order selection
# ---------------------------------------------------------------------------

def default_ell(s: float) -> float:
    """Target regularity used for the order rules: min(2, s + 1/2) + s.

    Capped at 2, the largest value the order rules accept (active for s > 3/4).
    """
    return min(2.0, min(2.0, s + 0.5) + s)


def _clamp(k: float, what: str) -> int:
    k = int(math.ceil(k - 1e-12))
    if k > MAX_ORDER:
        warnings.warn(f"{what} order {k} exceeds {MAX_ORDER}; clamped", RuntimeWarning)
        return MAX_ORDER
    return max(MIN_PLANNED_ORDER, k)


@dataclass(frozen=True)
class OrderPlan:
    """Quadrature orders for one mesh size.

    Touching pairs use fixed orders; separated pairs use a decreasing function
    of the distance that settles at a small far order beyond ``cutoffD``.
    """

    h: float
    s: float
    ell: float
    rho: tuple[float, float, float, float]
    kT: int
    kTboundary: int
    cutoffD: float
    farOrder: int
    farOrderBoundary: int
    constants: tuple[float, float] = (0.0, 0.0)

    def _ratio(self, d: float) -> float:
        return max(d / self.h, 1.0)

    def kNT(self, d: float) -> int:
        if d >= self.cutoffD:
            return self.farOrder
        r = self._ratio(d)
        lh = abs(math.log(self.h))
        num = ((self.ell - self.s) / 2 + 1 + self.s) * lh - self.s * math.log(r) - self.constants[1]
        k = num / (math.log(r) + math.log(self.rho[1]))
        return max(self.farOrder, _clamp(k, "separated-pair"))

    def kNTboundary(self, d: float) -> int:
        if d >= self.cutoffD:
            return self.farOrderBoundary
        r = self._ratio(d)
        lh = abs(math.log(self.h))
        num = ((self.ell - self.s) / 2 + 0.5 + self.s) * lh - self.s * math.log(r)
        k = num / (math.log(r) + math.log(self.rho[3]))
        return max(self.farOrderBoundary, _clamp(k, "separated-edge"))

    def near_table(self, n: int = 64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Tabulate both distance rules on a grid in [0, cutoffD).

        Used by the compiled kernels, which look orders up by distance.
        """
        d = np.linspace(0.0, self.cutoffD, n + 1)[:-1]
        k = np.array([self.kNT(x) for x in d], dtype=np.int64)
        kb = np.array([self.kNTboundary(x) for x in d], dtype=np.int64)
        return d, k, kb


def plan_orders(h: float, s: float, ell: float | None = None,
                rho: Sequence[float] = (2.0, 2.0, 2.0, 2.0),
                cutoff_multiple: float = 4.0,
                constants: tuple[float, float] = (0.0, 0.0)) -> OrderPlan:
    """Quadrature orders that keep the consistency error at the target rate."""
    if h <= 0:
        raise ValueError("mesh size must be positive")
    if not 0.0 < s < 1.0:
        raise ValueError("fractional order must lie in (0, 1)")
    ell = default_ell(s) if ell is None else float(ell)
    if not s < ell <= 2.0:
        raise ValueError("target regularity must lie in (s, 2]")
    rho = tuple(float(r) for r in rho)
    if len(rho) != 4 or min(rho) <= 1.0:
        raise ValueError("need four tuning constants, all > 1")
    lh = abs(math.log(h))
    kT = _clamp((ell + s + 2) / (2 * math.log(rho[0])) * lh - constants[0], "touching-pair")
    kTb = _clamp((ell + s + 1) / (2 * math.log(rho[2])) * lh, "touching-edge")
    far = max(MIN_PLANNED_ORDER, math.ceil((ell - s) / 2 + 1 - 1e-12))
    farb = max(MIN_PLANNED_ORDER, math.ceil((ell - s) / 2 + 0.5 - 1e-12))
    return OrderPlan(h, s, ell, rho, kT, kTb, cutoff_multiple * h, far, farb, constants)


planOrders = plan_orders
