"""Reference solutions, error norms, rate fits and condition estimates."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, astuple
from typing import Callable

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .assembly import gamma
from .mesh import DofMap, TriangleMesh
from .quadrature import simplex_gauss


def getoor_constant(s: float) -> float:
    return 2.0 ** (-2 * s) / gamma(1.0 + s) ** 2


def getoor_solution(x, s: float):
    """Solution of the fractional Poisson problem with unit load on the unit disk."""
    if not 0.0 < s < 1.0:
        raise ValueError("fractional order must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    out = getoor_constant(s) * np.clip(1.0 - r2, 0.0, None) ** s
    return float(out) if out.ndim == 0 else out


getoorSolution = getoor_solution


def getoor_energy_squared(s: float) -> float:
    """a(u, u) = int u for the unit-load solution: const * pi / (s + 1)."""
    return getoor_constant(s) * math.pi / (s + 1.0)


def galerkin_energy_error(A, uh: np.ndarray, b_unit: np.ndarray, s: float,
                          scale: float = 1.0) -> float:
    """Energy norm of scale * u_getoor - uh, computed exactly from the form.

    Uses a(u, v) = int v for the unit-load solution, so only the unit load
    vector ``b_unit`` and the matrix are needed.  ``A`` is a matrix or a
    matvec callable.
    """
    Au = A(uh) if callable(A) else A @ uh
    val = scale ** 2 * getoor_energy_squared(s) - 2 * scale * (b_unit @ uh) + uh @ Au
    if val < -1e-12 * max(1.0, scale ** 2 * getoor_energy_squared(s)):
        raise ArithmeticError(f"negative squared energy error {val:.3e}")
    return math.sqrt(max(val, 0.0))


def fe_values(mesh: TriangleMesh, dofmap: DofMap, uh: np.ndarray, order: int):
    """Quadrature points, weights and FE values on every element."""
    rule = simplex_gauss(order)
    xi, et = rule.nodes[:, 0], rule.nodes[:, 1]
    lam = np.column_stack([1 - xi - et, xi, et])
    P = mesh.vertices[mesh.triangles]
    X = np.einsum("qa,tad->tqd", lam, P).reshape(-1, 2)
    W = (2.0 * mesh.areas[:, None] * rule.weights[None, :]).ravel()
    nodal = dofmap.to_vertices(uh)[mesh.triangles]  # (nt, 3)
    U = (nodal @ lam.T).ravel()
    return X, W, U


def error_l2(u_exact: Callable | None, uh: np.ndarray, mesh: TriangleMesh,
             dofmap: DofMap, order: int = 6) -> float:
    """L2 norm of u_exact - uh by an element-wise simplex rule."""
    X, W, U = fe_values(mesh, dofmap, np.asarray(uh, float), order)
    ex = np.zeros(len(W)) if u_exact is None else np.asarray(u_exact(X), float)
    return float(math.sqrt(np.sum(W * (ex - U) ** 2)))


errorL2 = error_l2


def error_energy(u_fine: np.ndarray, uh: np.ndarray, P, A_fine) -> float:
    """sqrt(e^T A e) with e = u_fine - P uh on the common fine mesh."""
    e = np.asarray(u_fine, float) - (P @ uh if P is not None else uh)
    Ae = A_fine(e) if callable(A_fine) else A_fine @ e
    val = float(e @ Ae)
    if val < -1e-12 * max(1.0, float(np.abs(e).max()) ** 2):
        raise ArithmeticError("energy form is not positive on the error")
    return math.sqrt(max(val, 0.0))


errorEnergy = error_energy


# ---------------------------------------------------------------------------
# Convergence series
# ---------------------------------------------------------------------------

SERIES_HEADER = ["level", "h", "n", "errL2", "errEnergy", "assembly_s", "solve_s", "stored_reals"]


@dataclass
class SeriesRow:
    level: int
    h: float
    n: int
    errL2: float
    errEnergy: float
    assembly_s: float = 0.0
    solve_s: float = 0.0
    stored_reals: int = 0


@dataclass
class ConvergenceSeries:
    rows: list[SeriesRow] = field(default_factory=list)

    def append(self, row: SeriesRow) -> None:
        if self.rows and row.h >= self.rows[-1].h:
            raise ValueError("mesh size must decrease along the series")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for r in self.rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in astuple(r)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceSeries":
        rd = csv.DictReader(io.StringIO(text))
        if rd.fieldnames != SERIES_HEADER:
            raise ValueError("unexpected series header")
        out = cls()
        for row in rd:
            out.rows.append(SeriesRow(int(row["level"]), float(row["h"]), int(row["n"]),
                                      float(row["errL2"]), float(row["errEnergy"]),
                                      float(row["assembly_s"]), float(row["solve_s"]),
                                      int(row["stored_reals"])))
        return out


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) < 3:
        raise ValueError("need at least three points for a rate fit")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def fit_rate(series: ConvergenceSeries, column: str) -> float:
    return fit_slope(series.column("h"), series.column(column))


fitRate = fit_rate


# ---------------------------------------------------------------------------
# Condition estimates
# ---------------------------------------------------------------------------

class EstimationError(RuntimeError):
    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


def estimate_condition(apply: Callable, n: int, iters: int = 300, tol: float = 1e-6,
                       seed: int = 0):
    """Extremal Ritz values from Lanczos with full reorthogonalisation.

    Stops once both extreme Ritz values change by less than ``tol``
    (relative) over ten steps, or when the Krylov space is exhausted.
    Returns (lambda_max, lambda_min, kappa).
    """
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    Q = np.zeros((min(iters, n) + 1, n))
    Q[0] = q
    alpha, beta = [], []
    hist = []
    b = 0.0
    for k in range(min(iters, n)):
        w = apply(Q[k])
        a = float(Q[k] @ w)
        w = w - a * Q[k] - (b * Q[k - 1] if k else 0.0)
        w -= Q[:k + 1].T @ (Q[:k + 1] @ w)
        alpha.append(a)
        b = float(np.linalg.norm(w))
        ritz = eigvalsh_tridiagonal(np.array(alpha), np.array(beta)) if beta else np.array(alpha)
        hist.append((ritz[-1], ritz[0]))
        if b < 1e-12 * abs(ritz[-1]):
            break
        if len(hist) > 10:
            (m0, l0), (m1, l1) = hist[-11], hist[-1]
            if abs(m1 - m0) <= tol * abs(m1) and abs(l1 - l0) <= tol * abs(l1):
                break
        beta.append(b)
        Q[k + 1] = w / b
    else:
        if len(hist) < n:
            lmax, lmin = hist[-1]
            raise EstimationError("extremal Ritz values did not settle",
                                  (lmax, lmin, lmax / lmin))
    lmax, lmin = hist[-1]
    if lmin <= 0:
        raise EstimationError("operator is not positive definite", (lmax, lmin, math.inf))
    return lmax, lmin, lmax / lmin


estimateCondition = estimate_condition
