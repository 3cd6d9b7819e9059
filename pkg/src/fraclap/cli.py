"""Command-line drivers: ``fraclap <command> [--config FILE] [--out DIR] ...``.

Every command reads a key = value configuration (see ``RunConfig``), applies
``--set key=value`` and flag overrides, writes the effective configuration to
``<out>/config.txt`` and its CSV results next to it.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from .analysis import fit_slope
from .assembly import format_triplets
from .clustering import stats_csv
from .mesh import write_mesh
from .solvers import format_runlog
from .studies import (CONDITION_HEADER, MANUFACTURED_HEADER, ConfigError, OperatorCache, RunConfig,
                      run_brusselator_regime, run_condition_study, run_heat_study,
                      run_manufactured_brusselator, run_poisson_study, run_scaling_audit)
from .timestepping import format_snapshot

log = logging.getLogger("fraclap")

COMMANDS = ("mesh", "assemble", "poisson", "scaling", "heat", "brusselator", "condition")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _write(out: Path, name: str, text: str) -> Path:
    p = out / name
    p.write_text(text)
    log.info("wrote %s", p)
    return p


def load_config(args) -> RunConfig:
    overrides = {"experiment": args.command}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    text = Path(args.config).read_text() if args.config else ""
    return RunConfig.from_text(text, overrides)


def cmd_mesh(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    for L in cfg.levels:
        mesh = cache.mesh(L)
        write_mesh(mesh, out / f"mesh_L{L}.txt")
        print(f"level {L}: {mesh.nv} vertices, {mesh.nt} triangles, h = {mesh.h:.4g}")


def cmd_assemble(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    L = cfg.level_max
    rows = []
    for kind in cfg.operator_kinds():
        b = cache.get(L, cfg.s, kind)
        if kind == "dense":
            _write(out, f"A_L{L}_s{cfg.s:g}.txt", format_triplets(b.op))
        else:
            st = b.op.stats()
            rows.append((L, st["admissible"], st["near_entries"], st["stored_reals"]))
        print(f"{kind}: n = {b.dofmap.n}, stored reals = {b.stored}")
    if rows:
        _write(out, "partition_stats.csv", stats_csv(rows))


def cmd_poisson(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    res = run_poisson_study(cfg, cache)
    for (kind, solver), ser in res.series.items():
        _write(out, f"poisson_{cfg.case}_s{cfg.s:g}_{kind}_{solver}.csv", ser.to_csv())
    summary = res.summary()
    _write(out, "summary.txt", summary)
    print(summary, end="")


def cmd_scaling(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    res = run_scaling_audit(cfg, cache)
    _write(out, "scaling.csv", res.to_csv())
    stats = [(r[0], r[6], r[7], r[4]) for r in res.rows]
    _write(out, "partition_stats.csv", stats_csv(stats))
    ex = res.exponents()
    text = "".join(f"{k} exponent {v:.3f}\n" for k, v in ex.items()) or "no exponents (too few levels)\n"
    _write(out, "summary.txt", text)
    print(text, end="")


def cmd_heat(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    cfg.solvers = cfg.solvers if cfg.solvers != "direct" else "cg,mg"
    rows = run_heat_study(cfg, cache)
    _write(out, "runlog.csv", format_runlog(rows))
    print(format_runlog(rows), end="")


def cmd_condition(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    rows = run_condition_study(cfg, cache)
    _write(out, "condition.csv", _csv(CONDITION_HEADER, rows))
    if len(rows) >= 3:
        h = [r[1] for r in rows]
        print(f"kappa exponent {fit_slope(h, [r[5] for r in rows]):.3f}, "
              f"shifted {fit_slope(h, [r[7] for r in rows]):.3f}")


def cmd_brusselator(cfg: RunConfig, out: Path, cache: OperatorCache) -> None:
    if cfg.regime == "manufactured":
        res = run_manufactured_brusselator(cfg, cache)
        _write(out, "errors.csv", _csv(MANUFACTURED_HEADER, res["rows"]))
        text = "".join(f"{k} rate {v:.3f}\n" for k, v in res["rates"].items())
        _write(out, "summary.txt", text or "no rate fit (fewer than 3 levels)\n")
        print(text, end="")
        return
    res = run_brusselator_regime(cfg, cache)
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    for k, (t, (u, v)) in enumerate(zip(res.run.times, res.run.snapshots)):
        (snap / f"snapshot_{k:04d}.csv").write_text(
            format_snapshot(res.vertex_index, res.coords, u, v))
    meta = [f"regime = {cfg.regime}", f"alpha = {cfg.alpha}", f"beta = {cfg.beta}",
            f"level = {cfg.level_max}", f"dt = {cfg.dt}", f"seed = {cfg.seed}",
            f"domain_scale = {cfg.domain_scale}",
            "snapshot_times = " + " ".join(f"{t:.6g}" for t in res.run.times)]
    meta += [f"{k} = {v:.6g}" for k, v in res.metrics.items()]
    _write(out, "run.txt", "\n".join(meta) + "\n")
    print("\n".join(meta[-len(res.metrics):]))


HANDLERS = {"mesh": cmd_mesh, "assemble": cmd_assemble, "poisson": cmd_poisson,
            "scaling": cmd_scaling, "heat": cmd_heat, "brusselator": cmd_brusselator,
            "condition": cmd_condition}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraclap", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--threads", type=int, default=1, help="numba threads (1 = deterministic)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration value (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _set_threads(n: int) -> None:
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    try:
        import numba
        # the TBB layer on this image is too old and warns on first use
        numba.config.THREADING_LAYER = "workqueue"
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):  # pragma: no cover - numba is a hard dependency
        pass


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
        cfg = load_config(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "config.txt", cfg.to_text())
    try:
        HANDLERS[args.command](cfg, out, OperatorCache(cfg))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
