"""Experiment drivers behind the command line: Poisson convergence, scaling
audit, heat-equation solver sweep, Brusselator runs and condition numbers.

All drivers take a :class:`RunConfig` and an optional :class:`OperatorCache`
so that repeated studies (the acceptance suite) assemble each operator once.
"""
from __future__ import annotations

import configparser
import io
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .analysis import (ConvergenceSeries, SeriesRow, error_energy, error_l2, estimate_condition,
                       fit_slope, galerkin_energy_error, getoor_solution)
from .assembly import (DENSE_CAP, BilinearParams, assemble_dense, assemble_load, assemble_mass,
                       default_plan, lumped_mass, prolongation_chain)
from .clustering import assemble_hierarchical, interpolation_order_for
from .mesh import DofMap, TriangleMesh, build_disk_mesh, build_dof_map
from .solvers import (ShiftedOperator, SolveReport, build_multigrid, runlog_row, solve_cg,
                      solve_dense, solve_mg)
from .timestepping import (SPOT, STRIPE, BrusselatorParams, brusselator_rhs, choose_timestep,
                           gaussian_bump, random_initial, ring_radius, run_brusselator,
                           step_backward_euler, ShiftedSystem)

HIER_CAP = 200_000


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    experiment: str = "poisson"
    s: float = 0.25
    case: str = "getoor"  # getoor | smooth
    level_min: int = 1
    level_max: int = 4
    operator: str = "dense"  # dense | hierarchical | both
    solvers: str = "direct"  # comma list of direct, cg, mg
    eta: float = 1.0
    m: int = 0  # 0 selects interpolation_order_for
    leaf_size: int = 8
    ell: float = 0.0  # 0 selects the default target rate
    fine_offset: int = 1
    tol: float = 1e-8
    dt_rule: str = "L2"  # L2 | energy
    dt_constant: float = 1.0
    alpha_order: int = 2
    heat_steps: int = 3
    regime: str = "spot"  # spot | stripe | manufactured
    alpha: float = 0.75
    beta: float = 0.75
    dt: float = 0.01
    final_time: float = 30.0
    snapshot_every: int = 500
    domain_scale: float = 20.0
    bump_amplitude: float = 0.5
    bump_width: float = 0.1
    timings: bool = True
    dense_cap: int = DENSE_CAP
    hier_cap: int = HIER_CAP
    seed: int = 0

    LEVEL_MAX = 9

    def validate(self) -> "RunConfig":
        err = []
        if not 0 < self.s < 1:
            err.append("s must lie in (0, 1)")
        for name in ("alpha", "beta"):
            if not 0 < getattr(self, name) < 1:
                err.append(f"{name} must lie in (0, 1)")
        if not 0 <= self.level_min <= self.level_max <= self.LEVEL_MAX:
            err.append(f"need 0 <= level_min <= level_max <= {self.LEVEL_MAX}")
        if self.case not in ("getoor", "smooth"):
            err.append("case must be getoor or smooth")
        if self.operator not in ("dense", "hierarchical", "both"):
            err.append("operator must be dense, hierarchical or both")
        for sv in self.solver_list:
            if sv not in ("direct", "cg", "mg"):
                err.append(f"unknown solver {sv!r}")
        if self.eta <= 0:
            err.append("eta must be positive")
        if self.m < 0 or self.m == 1 or self.leaf_size < 1:
            err.append("need m = 0 (automatic) or m >= 2, and leaf_size >= 1")
        if self.dt <= 0 or self.final_time <= 0 or self.dt_constant <= 0:
            err.append("time steps and final time must be positive")
        if self.tol <= 0:
            err.append("tol must be positive")
        if self.regime not in ("spot", "stripe", "manufactured"):
            err.append("regime must be spot, stripe or manufactured")
        if self.dt_rule.lower() not in ("l2", "energy"):
            err.append("dt_rule must be L2 or energy")
        if self.fine_offset < 1:
            err.append("fine_offset must be at least 1")
        if self.domain_scale <= 0:
            err.append("domain_scale must be positive")
        if err:
            raise ConfigError("; ".join(err))
        return self

    @property
    def solver_list(self) -> list[str]:
        return [x.strip() for x in self.solvers.split(",") if x.strip()]

    @property
    def levels(self) -> range:
        return range(self.level_min, self.level_max + 1)

    def operator_kinds(self) -> list[str]:
        return ["dense", "hierarchical"] if self.operator == "both" else [self.operator]

    # text format ---------------------------------------------------------
    def to_text(self) -> str:
        lines = ["[run]"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text if text.lstrip().startswith("[") else "[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        raw = {}
        for sec in cp.sections():
            raw.update(cp[sec])
        raw.update(overrides or {})
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in raw.items():
            if k not in types:
                raise ConfigError(f"unknown configuration key {k!r}")
            kw[k] = _coerce(types[k], v, k)
        return cls(**kw).validate()


def _coerce(typ, v, key):
    if not isinstance(v, str):
        return v
    v = v.strip()
    try:
        if typ in ("bool", bool):
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if typ in ("int", int):
            return int(v)
        if typ in ("float", float):
            return float(v)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {v!r}") from exc
    return v


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass
class Built:
    mesh: TriangleMesh
    dofmap: DofMap
    op: object  # ndarray or HierarchicalOperator
    seconds: float
    stored: int

    @property
    def matvec(self) -> Callable:
        return (lambda x: self.op @ x) if isinstance(self.op, np.ndarray) else self.op.matvec


class OperatorCache:
    """Meshes, DoF maps and assembled operators keyed by level and form."""

    def __init__(self, cfg: RunConfig | None = None):
        self.cfg = cfg or RunConfig()
        self._meshes: dict[int, TriangleMesh] = {}
        self._ops: dict = {}
        self._mass: dict = {}

    def mesh(self, level: int) -> TriangleMesh:
        if level not in self._meshes:
            if level == 0:
                self._meshes[0] = build_disk_mesh(0)
            else:
                from .mesh import refine_uniform
                self._meshes[level] = refine_uniform(self.mesh(level - 1))
        return self._meshes[level]

    def dofmap(self, level: int, s: float, regional: bool = False) -> DofMap:
        return build_dof_map(self.mesh(level), s, boundary=True if regional else None)

    def get(self, level: int, s: float, kind: str = "dense", regional: bool = False,
            m: int | None = None) -> Built:
        cfg = self.cfg
        mesh = self.mesh(level)
        if kind == "hierarchical" and m is None:
            m = cfg.m or interpolation_order_for(mesh.h, s, cfg.ell or None)
        key = (level, s, kind, regional, m if kind == "hierarchical" else None)
        if key not in self._ops:
            dm = self.dofmap(level, s, regional)
            params = BilinearParams(s, regional=regional)
            plan = default_plan(mesh, s, **({"ell": cfg.ell} if cfg.ell else {}))
            t0 = time.perf_counter()
            if kind == "dense":
                if dm.n > cfg.dense_cap:
                    raise ConfigError(f"dense path refuses n = {dm.n} > {cfg.dense_cap}")
                op = assemble_dense(mesh, dm, params, plan, cap=cfg.dense_cap)
                stored = dm.n ** 2
            else:
                if dm.n > cfg.hier_cap:
                    raise ConfigError(f"hierarchical path refuses n = {dm.n} > {cfg.hier_cap}")
                op = assemble_hierarchical(mesh, dm, params, plan, eta=cfg.eta, m=m,
                                           leaf_size=cfg.leaf_size)
                stored = op.stored_reals()
            self._ops[key] = Built(mesh, dm, op, time.perf_counter() - t0, stored)
        return self._ops[key]

    def mass(self, level: int, s: float, regional: bool = False):
        key = (level, s, regional)
        if key not in self._mass:
            mesh = self.mesh(level)
            dm = self.dofmap(level, s, regional)
            self._mass[key] = (assemble_mass(mesh, dm), lumped_mass(mesh, dm))
        return self._mass[key]


def _seconds(cfg: RunConfig, t: float) -> float:
    return t if cfg.timings else 0.0


# ---------------------------------------------------------------------------
# Poisson
# ---------------------------------------------------------------------------

@dataclass
class PoissonResult:
    series: dict[tuple[str, str], ConvergenceSeries]
    solutions: dict = field(default_factory=dict, repr=False)

    def rates(self) -> dict:
        out = {}
        for key, ser in self.series.items():
            if len(ser.rows) >= 3:
                out[key] = {"errL2": fit_slope(ser.column("h"), ser.column("errL2")),
                            "errEnergy": fit_slope(ser.column("h"), ser.column("errEnergy"))}
        return out

    def summary(self) -> str:
        lines = []
        rates = self.rates()
        for (kind, solver), ser in self.series.items():
            r = rates.get((kind, solver))
            txt = ("rates: L2 %.3f energy %.3f" % (r["errL2"], r["errEnergy"])) if r else "no rate fit (fewer than 3 levels)"
            lines.append(f"{kind}/{solver}: {len(ser.rows)} levels, {txt}")
        return "\n".join(lines) + "\n"


def smooth_solution(x):
    return 1.0 - np.sum(np.asarray(x) ** 2, axis=-1)


def _solve(cfg, cache, level, s, kind, solver, b):
    built = cache.get(level, s, kind)
    t0 = time.perf_counter()
    if solver == "direct":
        A = built.op if isinstance(built.op, np.ndarray) else built.op.to_dense()
        x = solve_dense(A, b)
        iters = 1
    elif solver == "cg":
        x, rep = solve_cg(built.op if isinstance(built.op, np.ndarray) else built.op, b, cfg.tol)
        iters = rep.iterations
    else:
        lv = []
        for L in range(0, level + 1):
            bl = cache.get(L, s, kind)
            lv.append((bl.mesh, bl.dofmap, bl.op))
        hier = build_multigrid(lv)
        x, rep = solve_mg(hier, b, cfg.tol)
        iters = rep.iterations
    return x, time.perf_counter() - t0, iters


def run_poisson_study(cfg: RunConfig, cache: OperatorCache | None = None) -> PoissonResult:
    cache = cache or OperatorCache(cfg)
    s = cfg.s
    series: dict = {}
    sols: dict = {}
    for level in cfg.levels:
        mesh = cache.mesh(level)
        dm = cache.dofmap(level, s)
        for kind in cfg.operator_kinds():
            try:
                built = cache.get(level, s, kind)
                if cfg.case == "getoor":
                    b = assemble_load(mesh, dm, 1.0)
                else:
                    lf = level + cfg.fine_offset
                    fine = cache.get(lf, s, kind)
                    chain = [cache.mesh(L) for L in range(level, lf + 1)]
                    dms = [cache.dofmap(L, s) for L in range(level, lf + 1)]
                    P = prolongation_chain(chain, dms)
                    uI = smooth_solution(fine.mesh.vertices[fine.dofmap.vertex_of_dof])
                    b = P.T @ fine.matvec(uI)
                for solver in cfg.solver_list:
                    uh, ts, _ = _solve(cfg, cache, level, s, kind, solver, b)
                    if cfg.case == "getoor":
                        e2 = error_l2(lambda x: getoor_solution(x, s), uh, mesh, dm)
                        eE = galerkin_energy_error(built.matvec, uh, b, s)
                    else:
                        e2 = error_l2(smooth_solution, uh, mesh, dm)
                        eE = error_energy(uI, uh, P, fine.matvec)
                    row = SeriesRow(level, mesh.h, dm.n, e2, eE, _seconds(cfg, built.seconds),
                                    _seconds(cfg, ts), int(built.stored))
                    series.setdefault((kind, solver), ConvergenceSeries()).append(row)
                    sols[(kind, solver, level)] = uh
            except Exception as exc:
                raise RuntimeError(f"poisson study failed on level {level} ({kind}): {exc}") from exc
    return PoissonResult(series, sols)


runPoissonStudy = run_poisson_study


# ---------------------------------------------------------------------------
# scaling audit
# ---------------------------------------------------------------------------

SCALING_HEADER = ["level", "n", "dense_stored", "dense_seconds", "hier_stored", "hier_seconds",
                  "admissible_pairs", "near_entries"]


@dataclass
class ScalingResult:
    rows: list[list]

    def column(self, name):
        k = SCALING_HEADER.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(SCALING_HEADER) + "\n")
        for r in self.rows:
            out.write(",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r) + "\n")
        return out.getvalue()

    def exponents(self) -> dict:
        n = self.column("n")
        out = {}
        dense = self.column("dense_stored")
        ok = dense > 0
        if ok.sum() >= 2:
            out["dense_stored"] = float(np.polyfit(np.log(n[ok]), np.log(dense[ok]), 1)[0])
        adm = self.column("admissible_pairs") > 0
        if adm.sum() >= 2:
            for col in ("hier_stored", "hier_seconds", "near_entries"):
                y = self.column(col)[adm]
                if np.all(y > 0):
                    out[col] = float(np.polyfit(np.log(n[adm]), np.log(y), 1)[0])
        return out


def run_scaling_audit(cfg: RunConfig, cache: OperatorCache | None = None,
                      dense_levels: int | None = None) -> ScalingResult:
    """Stored reals and assembly time per level, dense against hierarchical.

    Dense matrices are assembled up to ``dense_levels`` (default: every level
    within the dense cap); above that the dense count is n^2 by definition
    and its time is reported as 0.
    """
    cache = cache or OperatorCache(cfg)
    rows = []
    for level in cfg.levels:
        dm = cache.dofmap(level, cfg.s)
        n = dm.n
        if (dense_levels is None or level <= dense_levels) and n <= cfg.dense_cap:
            d = cache.get(level, cfg.s, "dense")
            dsec = _seconds(cfg, d.seconds)
        else:
            dsec = 0.0
        h = cache.get(level, cfg.s, "hierarchical")
        st = h.op.stats()
        rows.append([level, n, n * n, dsec, int(h.stored), _seconds(cfg, h.seconds),
                     st["admissible"], st["near_entries"]])
    return ScalingResult(rows)


runScalingAudit = run_scaling_audit


# ---------------------------------------------------------------------------
# heat
# ---------------------------------------------------------------------------

def run_heat_study(cfg: RunConfig, cache: OperatorCache | None = None) -> list[list]:
    """Backward-Euler steps from u = 0 with f = 1, per level and solver.

    Returns run-log rows; ``iterations`` is the largest count over the steps.
    """
    cache = cache or OperatorCache(cfg)
    s = cfg.s
    rows = []
    for level in cfg.levels:
        built = cache.get(level, s, cfg.operator_kinds()[0])
        M, _ = cache.mass(level, s)
        b = assemble_load(built.mesh, built.dofmap, 1.0)
        dt = choose_timestep(built.mesh.h, s, cfg.alpha_order, cfg.dt_rule, cfg.dt_constant)
        for solver in cfg.solver_list:
            reports = []
            if solver == "mg":
                lv = []
                for L in range(0, level + 1):
                    bl = cache.get(L, s, "dense" if L < level else cfg.operator_kinds()[0])
                    lv.append((bl.mesh, bl.dofmap, cache.mass(L, s)[0], bl.op))
                system = ShiftedSystem(M, built.op, "mg", cfg.tol, lv,
                                       report=lambda th, r: reports.append(r))
            else:
                system = ShiftedSystem(M, built.op, solver, cfg.tol,
                                       report=lambda th, r: reports.append(r))
            u = np.zeros(built.dofmap.n)
            t0 = time.perf_counter()
            for _ in range(cfg.heat_steps):
                u = step_backward_euler(M, built.op, dt, u, b, system)
            secs = time.perf_counter() - t0
            iters = max((r.iterations for r in reports), default=1)
            res = max((r.finalResidual for r in reports), default=0.0)
            rep = SolveReport(iters, res, _seconds(cfg, secs))
            rows.append(runlog_row(solver, level, s, dt, rep))
    return rows


runHeatStudy = run_heat_study


# ---------------------------------------------------------------------------
# condition numbers
# ---------------------------------------------------------------------------

CONDITION_HEADER = ["level", "h", "n", "lambda_max", "lambda_min", "kappa", "dt", "kappa_shifted"]


def run_condition_study(cfg: RunConfig, cache: OperatorCache | None = None) -> list[list]:
    cache = cache or OperatorCache(cfg)
    rows = []
    for level in cfg.levels:
        built = cache.get(level, cfg.s, cfg.operator_kinds()[0])
        n = built.dofmap.n
        lmax, lmin, kappa = estimate_condition(built.matvec, n, seed=cfg.seed)
        M, _ = cache.mass(level, cfg.s)
        dt = choose_timestep(built.mesh.h, cfg.s, cfg.alpha_order, cfg.dt_rule, cfg.dt_constant)
        S = ShiftedOperator(M, built.op, dt)
        k2 = estimate_condition(S.matvec, n, seed=cfg.seed)[2]
        rows.append([level, built.mesh.h, n, lmax, lmin, kappa, dt, k2])
    return rows


# ---------------------------------------------------------------------------
# Brusselator
# ---------------------------------------------------------------------------

@dataclass
class BrusselatorResult:
    coords: np.ndarray
    vertex_index: np.ndarray
    run: object
    metrics: dict


def run_brusselator_regime(cfg: RunConfig, cache: OperatorCache | None = None,
                           level: int | None = None) -> BrusselatorResult:
    """Spot or stripe pattern run with the regional form on all vertices."""
    cache = cache or OperatorCache(cfg)
    level = cfg.level_max if level is None else level
    pset = SPOT if cfg.regime == "spot" else STRIPE
    p = BrusselatorParams(alpha=cfg.alpha, beta=cfg.beta, **pset)
    kind = cfg.operator_kinds()[0]
    bu = cache.get(level, cfg.alpha, kind, regional=True)
    bv = bu if cfg.beta == cfg.alpha else cache.get(level, cfg.beta, kind, regional=True)
    M, ML = cache.mass(level, cfg.alpha, regional=True)
    R = cfg.domain_scale
    Au = _scaled(bu.op, R ** (-2 * cfg.alpha))
    Av = Au if bv is bu else _scaled(bv.op, R ** (-2 * cfg.beta))
    X = bu.mesh.vertices[bu.dofmap.vertex_of_dof]
    if cfg.regime == "spot":
        u0 = gaussian_bump(X, cfg.bump_amplitude, cfg.bump_width)
        v0 = np.zeros_like(u0)
    else:
        u0 = random_initial(len(X), cfg.seed)
        v0 = random_initial(len(X), cfg.seed + 1)
    steps = int(round(cfg.final_time / cfg.dt))
    run = run_brusselator(M, Au, M, Av, ML, p, u0, v0, cfg.dt, steps, cfg.snapshot_every,
                          method="direct" if kind == "dense" else "cg")
    u, v = run.last()
    metrics = {"ring_radius": ring_radius(X, u), "u_max": float(np.abs(u).max()),
               "u_rms": float(np.sqrt(np.mean((u - u.mean()) ** 2))), "u_mean": float(u.mean()),
               "final_time": run.times[-1]}
    return BrusselatorResult(X, bu.dofmap.vertex_of_dof, run, metrics)


class _Scaled:
    def __init__(self, op, c):
        self.op, self.c = op, c
        self.shape = op.shape

    def matvec(self, x):
        return self.c * self.op.matvec(x)

    __call__ = matvec
    __matmul__ = matvec

    def diagonal(self):
        return self.c * self.op.diagonal()

    def to_dense(self):
        return self.c * self.op.to_dense()


def _scaled(op, c: float):
    if isinstance(op, np.ndarray):
        return op * c
    return _Scaled(op, c)


MANUFACTURED = dict(etaB=0.2, B=1.22, Q=0.1)


def run_manufactured_brusselator(cfg: RunConfig, cache: OperatorCache | None = None,
                                 final_time: float = 10.0, dt_constant: float = 0.5) -> dict:
    """Errors of the forced Brusselator against u = eta sin t u^s, v = cos 2t u^s / eta.

    Dirichlet (integral) form with alpha = beta = cfg.alpha; dt ~ h^(1/2).
    Returns per-level maxima over the time steps and fitted rates.
    """
    cache = cache or OperatorCache(cfg)
    s = cfg.alpha
    p = BrusselatorParams(alpha=s, beta=s, **MANUFACTURED)
    eta = p.etaB
    rows = []
    for level in cfg.levels:
        built = cache.get(level, s, "dense")
        mesh, dm, A = built.mesh, built.dofmap, built.op
        M, ML = cache.mass(level, s)
        b1 = assemble_load(mesh, dm, 1.0)
        ms = assemble_load(mesh, dm, lambda x: getoor_solution(x, s), order=12)
        nodes = getoor_solution(mesh.vertices[dm.vertex_of_dof], s)

        def forcing(t, nodes=nodes, ms=ms, b1=b1, ML=ML):
            uI = eta * math.sin(t) * nodes
            vI = math.cos(2 * t) / eta * nodes
            ru, rv = brusselator_rhs(uI, vI, p)
            fu = eta * math.cos(t) * ms + eta * math.sin(t) * b1 - ML * ru
            fv = (-2 * eta * math.sin(2 * t) * ms + math.cos(2 * t) / eta * b1) / eta ** 2 - ML * rv
            return [fu, fv]

        steps = int(math.ceil(final_time / (dt_constant * math.sqrt(mesh.h))))
        dt = final_time / steps
        errs = []

        def record(t, state):
            u, v = state
            su, sv = eta * math.sin(t), math.cos(2 * t) / eta
            errs.append((error_l2(lambda x: su * getoor_solution(x, s), u, mesh, dm),
                         error_l2(lambda x: sv * getoor_solution(x, s), v, mesh, dm),
                         galerkin_energy_error(A, u, b1, s, su),
                         galerkin_energy_error(A, v, b1, s, sv)))

        v0 = solve_dense(A, b1) / eta
        run_brusselator(M, A, M, A, ML, p, np.zeros(dm.n), v0, dt, steps,
                        forcing=forcing, callback=record)
        e = np.max(np.array(errs), axis=0)
        rows.append([level, mesh.h, dt, *e])
    arr = np.array(rows)
    names = ["L2_u", "L2_v", "energy_u", "energy_v"]
    rates = {}
    if len(rows) >= 3:
        rates = {nm: fit_slope(arr[:, 1], arr[:, 3 + k]) for k, nm in enumerate(names)}
    return {"rows": rows, "rates": rates}


MANUFACTURED_HEADER = ["level", "h", "dt", "L2_u", "L2_v", "energy_u", "energy_v"]
