"""Direct, conjugate gradient and geometric multigrid solvers.

Operators are anything with ``matvec``/``__matmul__`` and a ``diagonal()``
method; dense numpy arrays and scipy sparse matrices are wrapped on the fly.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import DofMap, TriangleMesh, prolongation


class FactorizationError(np.linalg.LinAlgError):
    pass


class IterationLimitError(RuntimeError):
    def __init__(self, msg: str, x: np.ndarray, report: "SolveReport"):
        super().__init__(msg)
        self.x = x
        self.report = report


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, x: np.ndarray, report: "SolveReport"):
        super().__init__(msg)
        self.x = x
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    finalResidual: float
    wallTime: float
    history: list[float] = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# operator wrappers
# ---------------------------------------------------------------------------

class DenseOperator:
    """Thin wrapper giving a dense matrix the operator interface."""

    def __init__(self, A: np.ndarray):
        self.A = np.asarray(A, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("square matrix expected")

    @property
    def shape(self):
        return self.A.shape

    def matvec(self, x):
        return self.A @ x

    __call__ = matvec
    __matmul__ = matvec

    def diagonal(self):
        return np.diag(self.A).copy()

    def to_dense(self):
        return self.A


class ShiftedOperator:
    """x -> mass x + dt * op x, the implicit time-step matrix."""

    def __init__(self, mass, op, dt: float):
        if dt < 0:
            raise ValueError("time step must be non-negative")
        self.mass = mass
        self.op = as_operator(op)
        self.dt = float(dt)

    @property
    def shape(self):
        return self.op.shape

    def matvec(self, x):
        return self.mass @ x + self.dt * self.op.matvec(x)

    __call__ = matvec
    __matmul__ = matvec

    def diagonal(self):
        return np.asarray(self.mass.diagonal()).ravel() + self.dt * self.op.diagonal()

    def to_dense(self):
        M = self.mass.toarray() if sp.issparse(self.mass) else np.asarray(self.mass)
        return M + self.dt * dense_of(self.op)


class _SparseOperator:
    def __init__(self, A):
        self.A = A.tocsr()

    @property
    def shape(self):
        return self.A.shape

    def matvec(self, x):
        return self.A @ x

    __call__ = matvec
    __matmul__ = matvec

    def diagonal(self):
        return self.A.diagonal()

    def to_dense(self):
        return self.A.toarray()


def as_operator(A):
    if isinstance(A, np.ndarray):
        return DenseOperator(A)
    if sp.issparse(A):
        return _SparseOperator(A)
    if hasattr(A, "matvec"):
        return A
    raise TypeError(f"cannot use {type(A).__name__} as an operator")


def dense_of(op) -> np.ndarray:
    op = as_operator(op)
    return np.asarray(op.to_dense())


# ---------------------------------------------------------------------------
# direct
# ---------------------------------------------------------------------------

def factorize(A) -> tuple:
    """Cholesky factor of an SPD matrix; raises FactorizationError otherwise."""
    A = dense_of(A)
    try:
        return sla.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"matrix is not positive definite: {exc}") from exc


def solve_dense(A, b: np.ndarray, factor: tuple | None = None) -> np.ndarray:
    """Solve A x = b for SPD A by a Cholesky factorisation."""
    b = np.asarray(b, dtype=float)
    c = factor if factor is not None else factorize(A)
    return sla.cho_solve(c, b, check_finite=False)


solveDense = solve_dense


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------

def solve_cg(apply, b: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000,
             x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Unpreconditioned CG; stops at relative residual <= tol."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    t0 = time.perf_counter()
    A = apply if callable(apply) and not hasattr(apply, "matvec") else as_operator(apply).matvec
    b = np.asarray(b, dtype=float)
    nb = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if nb == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, time.perf_counter() - t0)
    r = b - A(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = float(r @ r)
    hist = [math.sqrt(rr) / nb]
    k = 0
    while hist[-1] > tol:
        if k >= max_iter:
            rep = SolveReport(k, hist[-1], time.perf_counter() - t0, hist)
            raise IterationLimitError(f"CG did not converge in {max_iter} iterations "
                                      f"(residual {hist[-1]:.3e})", x, rep)
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            rep = SolveReport(k, hist[-1], time.perf_counter() - t0, hist)
            raise DivergenceError("operator is not positive definite", x, rep)
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        k += 1
        hist.append(math.sqrt(rr) / nb)
    return x, SolveReport(k, hist[-1], time.perf_counter() - t0, hist)


solveCG = solve_cg


# ---------------------------------------------------------------------------
# multigrid
# ---------------------------------------------------------------------------

@dataclass
class MultigridHierarchy:
    """Operators coarse to fine, with P[k] mapping level k-1 to level k."""

    operators: list
    prolongations: list
    nu: int = 2
    omega: float = 2.0 / 3.0
    _coarse: tuple | None = None
    _dinv: list = field(default_factory=list)

    @property
    def nlevels(self) -> int:
        return len(self.operators)

    def coarse_solve(self, b):
        if self._coarse is None:
            self._coarse = factorize(self.operators[0])
        return sla.cho_solve(self._coarse, b, check_finite=False)

    def smooth(self, k, x, b, steps):
        op = self.operators[k]
        dinv = self._dinv[k]
        for _ in range(steps):
            x = x + self.omega * dinv * (b - op.matvec(x))
        return x

    def vcycle(self, k: int, b: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        if k == 0:
            return self.coarse_solve(b)
        x = np.zeros_like(b) if x is None else x
        x = self.smooth(k, x, b, self.nu)
        r = b - self.operators[k].matvec(x)
        P = self.prolongations[k]
        x = x + P @ self.vcycle(k - 1, P.T @ r)
        return self.smooth(k, x, b, self.nu)


def build_multigrid(levels: Sequence[tuple[TriangleMesh, DofMap, object]], nu: int = 2,
                    omega: float = 2.0 / 3.0) -> MultigridHierarchy:
    """Hierarchy from (mesh, dofmap, operator) triples ordered coarse to fine."""
    if not levels:
        raise ValueError("at least one level is needed")
    if nu < 0 or not 0 < omega <= 1:
        raise ValueError("need nu >= 0 and 0 < omega <= 1")
    ops, Ps = [], [None]
    for k, (mesh, dm, op) in enumerate(levels):
        op = as_operator(op)
        if op.shape != (dm.n, dm.n):
            raise ValueError(f"operator on level {k} does not match its DoF map")
        ops.append(op)
        if k:
            prev_mesh, prev_dm, _ = levels[k - 1]
            if mesh.parents is None or mesh.nt != 4 * prev_mesh.nt:
                raise ValueError("meshes are not nested")
            Ps.append(prolongation(mesh, prev_dm, dm))
    hier = MultigridHierarchy(ops, Ps, nu, omega)
    hier._dinv = [1.0 / op.diagonal() for op in ops]
    return hier


buildMultigrid = build_multigrid


def solve_mg(hier: MultigridHierarchy, b: np.ndarray, tol: float = 1e-8,
             max_cycles: int = 200, x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """V-cycles on the finest level until the relative residual is <= tol."""
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    nb = float(np.linalg.norm(b))
    top = hier.nlevels - 1
    if nb == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, time.perf_counter() - t0)
    if top == 0:
        x = hier.coarse_solve(b)
        res = float(np.linalg.norm(b - hier.operators[0].matvec(x))) / nb
        return x, SolveReport(1, res, time.perf_counter() - t0, [1.0, res])
    op = hier.operators[top]
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    hist = [float(np.linalg.norm(b - op.matvec(x))) / nb]
    k = 0
    while hist[-1] > tol:
        if k >= max_cycles:
            rep = SolveReport(k, hist[-1], time.perf_counter() - t0, hist)
            raise IterationLimitError("multigrid did not converge", x, rep)
        x = hier.vcycle(top, b, x)
        k += 1
        hist.append(float(np.linalg.norm(b - op.matvec(x))) / nb)
        if k >= 5 and hist[-1] > 0.95 ** 5 * hist[-6]:
            rep = SolveReport(k, hist[-1], time.perf_counter() - t0, hist)
            raise DivergenceError("multigrid stagnated (contraction > 0.95 over 5 cycles)", x, rep)
    return x, SolveReport(k, hist[-1], time.perf_counter() - t0, hist)


solveMG = solve_mg


def contraction_factor(hier: MultigridHierarchy, cycles: int = 8, seed: int = 0) -> float:
    """Geometric-mean V-cycle error reduction on a random error, b = 0."""
    top = hier.nlevels - 1
    op = hier.operators[top]
    n = op.shape[0]
    e = np.random.default_rng(seed).standard_normal(n)
    zero = np.zeros(n)
    norms = [np.linalg.norm(e)]
    for _ in range(cycles):
        e = hier.vcycle(top, zero, e)
        norms.append(np.linalg.norm(e))
    return float((norms[-1] / norms[2]) ** (1.0 / (cycles - 2)))


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------

RUNLOG_HEADER = ["solver", "level", "s", "dt", "iterations", "residual", "seconds"]


def runlog_row(solver: str, level: int, s: float, dt: float, rep: SolveReport) -> list:
    return [solver, level, f"{s:g}", f"{dt:.6g}", rep.iterations, f"{rep.finalResidual:.3e}",
            f"{rep.wallTime:.4f}"]


def format_runlog(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUNLOG_HEADER)
    w.writerows(rows)
    return buf.getvalue()
