"""Backward Euler and IMEX Runge-Kutta stepping for fractional heat and
Brusselator problems.

Every implicit stage solves a system with matrix M + theta * A, where M is
the consistent mass matrix.  Reaction terms are evaluated at the nodes and
coupled through the lumped mass.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import scipy.linalg as sla

from .solvers import ShiftedOperator, as_operator, build_multigrid, factorize, solve_cg, solve_mg


class StageError(RuntimeError):
    def __init__(self, stage: int, cause: Exception):
        super().__init__(f"implicit stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# tableaux
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ButcherPair:
    implicit: np.ndarray  # (4, 4) lower triangular
    implicit_weights: np.ndarray
    explicit: np.ndarray  # (4, 4) strictly lower triangular
    explicit_weights: np.ndarray
    abscissae: np.ndarray

    @property
    def stages(self) -> int:
        return len(self.abscissae)

    def consistency_defect(self) -> float:
        """Largest |row sum - c_i| over stages 2.. of both tableaux."""
        c = self.abscissae
        d1 = np.abs(self.implicit.sum(axis=1) - c)[1:]
        d2 = np.abs(self.explicit.sum(axis=1) - c)[1:]
        return float(max(d1.max(), d2.max()))

    def stiffly_accurate(self) -> bool:
        return bool(np.array_equal(self.implicit[-1], self.implicit_weights)
                    and np.array_equal(self.explicit[-1], self.explicit_weights))


def _koto(explicit_row3) -> ButcherPair:
    imp = np.array([[0.0, 0, 0, 0],
                    [0, 1, 0, 0],
                    [0, -0.5, 1, 0],
                    [0, -1, 1, 1]])
    exp = np.array([[0.0, 0, 0, 0],
                    [1, 0, 0, 0],
                    [explicit_row3[0], explicit_row3[1], 0, 0],
                    [0, 0, 1, 0]])
    return ButcherPair(imp, np.array([0.0, -1, 1, 1]), exp, np.array([0.0, 0, 1, 0]),
                       np.array([0.0, 1, 0.5, 1]))


# As printed, the third explicit row is (0, 0): its row sum is 0 at the
# abscissa 1/2 and the pair drops to first order.  (1/2, 0) restores both.
KOTO_AS_PRINTED = _koto((0.0, 0.0))
KOTO = _koto((0.5, 0.0))


def choose_timestep(h: float, s: float, alpha_order: int, target: str = "L2",
                    constant: float = 1.0) -> float:
    """Time step balancing an order-alpha scheme against the spatial error."""
    if h <= 0 or alpha_order < 1 or not 0 < s < 1:
        raise ValueError("need h > 0, order >= 1 and s in (0, 1)")
    return constant * h ** timestep_exponent(s, alpha_order, target)


def timestep_exponent(s: float, alpha_order: int, target: str = "L2") -> float:
    if target.lower() in ("l2", "l^2"):
        return min(2.0, 1.0 + 2.0 * s) / (2.0 * alpha_order)
    if target.lower() in ("energy", "hs"):
        return 1.0 / (2.0 * alpha_order)
    raise ValueError(f"unknown time-step target {target!r}")


chooseTimestep = choose_timestep


# ---------------------------------------------------------------------------
# shifted systems
# ---------------------------------------------------------------------------

class ShiftedSystem:
    """Solves (M + theta A) x = b, caching one solver per theta.

    ``method`` is ``direct`` (Cholesky of the dense matrix), ``cg`` or ``mg``.
    For ``mg`` pass ``mg_levels`` = [(mesh, dofmap, mass, op), ...] coarse to
    fine, the last entry matching (mass, op).
    """

    def __init__(self, mass, op, method: str = "direct", tol: float = 1e-8,
                 mg_levels: Sequence | None = None, report: Callable | None = None):
        if method not in ("direct", "cg", "mg"):
            raise ValueError(f"unknown solver {method!r}")
        if method == "mg" and not mg_levels:
            raise ValueError("multigrid needs the level hierarchy")
        self.mass = mass
        self.op = as_operator(op)
        self.method = method
        self.tol = tol
        self.mg_levels = mg_levels
        self.report = report
        self._cache: dict[float, object] = {}
        self._mass_lu = None

    def _solver(self, theta: float):
        if theta not in self._cache:
            if self.method == "direct":
                self._cache[theta] = factorize(ShiftedOperator(self.mass, self.op, theta))
            elif self.method == "mg":
                lv = [(m, d, ShiftedOperator(M, A, theta)) for m, d, M, A in self.mg_levels]
                self._cache[theta] = build_multigrid(lv)
            else:
                self._cache[theta] = ShiftedOperator(self.mass, self.op, theta)
        return self._cache[theta]

    def solve(self, theta: float, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        S = self._solver(theta)
        if self.method == "direct":
            return sla.cho_solve(S, b, check_finite=False)
        if self.method == "cg":
            x, rep = solve_cg(S, b, self.tol, x0=x0)
        else:
            x, rep = solve_mg(S, b, self.tol, x0=x0)
        if self.report is not None:
            self.report(theta, rep)
        return x

    def mass_solve(self, b: np.ndarray) -> np.ndarray:
        if self._mass_lu is None:
            self._mass_lu = spla.splu(sp.csc_matrix(self.mass))
        return self._mass_lu.solve(b)


def step_backward_euler(M, A, dt: float, u_prev: np.ndarray, f_next: np.ndarray | None = None,
                        system: ShiftedSystem | None = None) -> np.ndarray:
    """(M + dt A) u_next = M u_prev + dt f_next; f_next is a load vector."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    rhs = M @ u_prev
    if f_next is not None:
        rhs = rhs + dt * np.asarray(f_next)
    if system is None:
        system = ShiftedSystem(M, A)
    try:
        return system.solve(dt, rhs, x0=u_prev)
    except Exception as exc:
        raise StageError(1, exc) from exc


stepBackwardEuler = step_backward_euler


@dataclass
class Field:
    """One unknown: M u' = -kappa A u + explicit terms."""

    system: ShiftedSystem
    kappa: float = 1.0

    @property
    def mass(self):
        return self.system.mass

    @property
    def op(self):
        return self.system.op


def step_imex(fields: Sequence[Field], dt: float, t: float, state: Sequence[np.ndarray],
              explicit: Callable[[float, list[np.ndarray]], list[np.ndarray]],
              tableau: ButcherPair = KOTO,
              source: Callable[[float], list[np.ndarray]] | None = None) -> list[np.ndarray]:
    """One IMEX Runge-Kutta step.

    ``explicit(t, U)`` returns the explicit right-hand sides as load vectors
    (already multiplied by the mass or tested against the basis).  A known
    time-dependent load ``source(t)`` is integrated with the implicit
    tableau: explicit treatment degrades the stiff field to first order.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    A, Ah, c = tableau.implicit, tableau.explicit, tableau.abscissae
    ns = tableau.stages
    nf = len(fields)
    Mu = [f.mass @ u for f, u in zip(fields, state)]
    G = [[None] * ns for _ in range(nf)]  # -kappa A U_j
    E: list = [None] * ns
    U = list(state)
    for i in range(ns):
        S = source(t + c[i] * dt) if source is not None else None
        newU = []
        for k, f in enumerate(fields):
            rhs = Mu[k].copy()
            if S is not None and A[i, i]:
                rhs += dt * A[i, i] * S[k]
            for j in range(i):
                if A[i, j]:
                    rhs += dt * A[i, j] * G[k][j]
                if Ah[i, j]:
                    rhs += dt * Ah[i, j] * E[j][k]
            if A[i, i]:
                try:
                    x = f.system.solve(A[i, i] * dt * f.kappa, rhs, x0=U[k])
                except Exception as exc:
                    raise StageError(i + 1, exc) from exc
            elif i == 0 and not np.any(A[0]) and not np.any(Ah[0]):
                x = state[k].copy()
            else:
                x = f.system.mass_solve(rhs)
            newU.append(x)
        U = newU
        for k, f in enumerate(fields):
            G[k][i] = -f.kappa * f.op.matvec(U[k])
            if S is not None:
                G[k][i] = G[k][i] + S[k]
        if i < ns - 1 or not tableau.stiffly_accurate():
            E[i] = explicit(t + c[i] * dt, U)
    if tableau.stiffly_accurate():
        return U
    out = []
    for k, f in enumerate(fields):
        rhs = Mu[k].copy()
        for j in range(ns):
            rhs += dt * (tableau.implicit_weights[j] * G[k][j]
                         + tableau.explicit_weights[j] * E[j][k])
        out.append(f.system.mass_solve(rhs))
    return out


stepKotoIMEX = step_imex


def dahlquist_error(lam_i: float, lam_e: float, dt: float, T: float = 1.0,
                    tableau: ButcherPair = KOTO) -> float:
    """|y_N - exp((lam_i + lam_e) T)| for y' = lam_i y + lam_e y, y(0) = 1."""
    A, Ah, b, bh = tableau.implicit, tableau.explicit, tableau.implicit_weights, tableau.explicit_weights
    n = int(round(T / dt))
    y = 1.0
    ns = tableau.stages
    for _ in range(n):
        Y = np.zeros(ns)
        for i in range(ns):
            acc = y + dt * sum(A[i, j] * lam_i * Y[j] + Ah[i, j] * lam_e * Y[j] for j in range(i))
            Y[i] = acc / (1.0 - dt * A[i, i] * lam_i)
        y = y + dt * float(np.sum(b * lam_i * Y + bh * lam_e * Y))
    return abs(y - math.exp((lam_i + lam_e) * n * dt))


# ---------------------------------------------------------------------------
# Brusselator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BrusselatorParams:
    etaB: float
    Q: float
    B: float
    alpha: float = 0.75
    beta: float = 0.75

    def __post_init__(self):
        if self.etaB <= 0 or self.Q <= 0 or self.B <= 0:
            raise ValueError("etaB, Q and B must be positive")
        for o in (self.alpha, self.beta):
            if not 0 < o < 1:
                raise ValueError("fractional orders must lie in (0, 1)")


SPOT = dict(etaB=0.2, B=1.22, Q=0.1)
STRIPE = dict(etaB=0.2, B=6.26, Q=2.5)


def reaction_terms(u, v, p: BrusselatorParams):
    """(B-1)u + Q^2 v + (B/Q)u^2 + 2Q uv + u^2 v and the unscaled v-reaction."""
    nl = (p.B / p.Q) * u * u + 2.0 * p.Q * u * v + u * u * v
    ru = (p.B - 1.0) * u + p.Q ** 2 * v + nl
    rv = -p.B * u - p.Q ** 2 * v - nl
    return ru, rv


def brusselator_rhs(u, v, p: BrusselatorParams):
    """Reaction right-hand sides; the v part is divided by etaB^2."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if u.shape != v.shape:
        raise ValueError("u and v must have the same length")
    ru, rv = reaction_terms(u, v, p)
    return ru, rv / p.etaB ** 2


brusselatorRHS = brusselator_rhs


def gaussian_bump(x: np.ndarray, amplitude: float = 0.5, width: float = 0.1) -> np.ndarray:
    """Localised initial perturbation centred at the origin."""
    r2 = np.sum(np.asarray(x) ** 2, axis=-1)
    return amplitude * np.exp(-r2 / (2.0 * width ** 2))


def random_initial(n: int, seed: int, amplitude: float = 0.1) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-amplitude, amplitude, n)


SNAPSHOT_HEADER = ["vertexIndex", "x", "y", "u", "v"]


def format_snapshot(vertex_index: np.ndarray, coords: np.ndarray, u: np.ndarray,
                    v: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SNAPSHOT_HEADER)
    for k in range(len(u)):
        w.writerow([int(vertex_index[k]), f"{coords[k, 0]:.10g}", f"{coords[k, 1]:.10g}",
                    f"{u[k]:.10g}", f"{v[k]:.10g}"])
    return buf.getvalue()


def radial_profile(coords: np.ndarray, values: np.ndarray, bins: int = 20):
    """Bin centres and mean values over annuli of the unit disk."""
    r = np.hypot(coords[:, 0], coords[:, 1])
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(r, edges) - 1, 0, bins - 1)
    sums = np.bincount(idx, weights=values, minlength=bins)
    cnt = np.bincount(idx, minlength=bins)
    mean = np.divide(sums, cnt, out=np.zeros(bins), where=cnt > 0)
    return 0.5 * (edges[1:] + edges[:-1]), mean


def ring_radius(coords: np.ndarray, u: np.ndarray, bins: int = 20) -> float:
    """Radius of the largest mean |u| annulus (the ring, once it has formed)."""
    rc, mean = radial_profile(coords, np.abs(u), bins)
    return float(rc[int(np.argmax(mean))])


@dataclass
class BrusselatorRun:
    times: list[float] = field(default_factory=list)
    snapshots: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def last(self):
        return self.snapshots[-1]


def run_brusselator(Mu, Au, Mv, Av, lumped: np.ndarray, p: BrusselatorParams,
                    u0: np.ndarray, v0: np.ndarray, dt: float, steps: int,
                    snapshot_every: int = 0, method: str = "direct",
                    forcing: Callable | None = None, t0: float = 0.0,
                    callback: Callable | None = None) -> BrusselatorRun:
    """Integrate the deviation Brusselator with the Koto pair.

    ``forcing(t)`` optionally returns extra load vectors (fu, fv) for the
    u and the etaB^2-scaled v equation; it is integrated implicitly.
    """
    su = ShiftedSystem(Mu, Au, method)
    sv = su if (Av is Au and Mv is Mu) else ShiftedSystem(Mv, Av, method)
    fields = [Field(su, 1.0), Field(sv, 1.0 / p.etaB ** 2)]

    def explicit(t, U):
        ru, rv = brusselator_rhs(U[0], U[1], p)
        eu, ev = lumped * ru, lumped * rv
        return [eu, ev]

    run = BrusselatorRun()
    state = [np.array(u0, float), np.array(v0, float)]
    run.times.append(t0)
    run.snapshots.append((state[0].copy(), state[1].copy()))
    t = t0
    for k in range(1, steps + 1):
        state = step_imex(fields, dt, t, state, explicit, source=forcing)
        t = t0 + k * dt
        if callback is not None:
            callback(t, state)
        if snapshot_every and k % snapshot_every == 0:
            run.times.append(t)
            run.snapshots.append((state[0].copy(), state[1].copy()))
    if not run.times or run.times[-1] != t:
        run.times.append(t)
        run.snapshots.append((state[0].copy(), state[1].copy()))
    return run
