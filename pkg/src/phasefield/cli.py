"""Command line entry point: ``phasefield run|equivalence|precond-bench|sweep``."""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, io
from .config import RunConfig, parse_config
from .errors import PhaseFieldError
from .fem import FemSpace
from .mesh import generate_uniform


def _load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PhaseFieldError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def execute_run(cfg: RunConfig, outdir=None, quiet: bool = True) -> dict:
    """Run one configuration and write its outputs; returns a summary."""
    out = Path(outdir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    progress = None if quiet else (lambda r: print(f"step {r.n:6d}  t = {r.t:.6g}  "
                                                   f"J = {r.energy:.10g}", flush=True))
    result = analysis.run_experiment(cfg, progress=progress)
    io.emit_timeseries(result.records, out / "timeseries.csv")
    for i, (t, u) in enumerate(sorted(result.snapshots.items())):
        io.emit_snapshot(result.space, u, out / f"snapshot_{i:04d}.vtk")
    io.write_manifest(out, cfg.to_dict(), cfg.seed,
                      {"snapshot_times": sorted(result.snapshots), "failure": result.failure})
    return {"output": str(out), "steps": len(result.records) - 1, "failure": result.failure}


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    summary = execute_run(cfg, args.output, quiet=args.quiet)
    print(f"wrote {summary['output']} ({summary['steps']} steps)")
    if summary["failure"]:
        print(f"error: {summary['failure']}", file=sys.stderr)
        return 1
    return 0


def _cmd_equivalence(args) -> int:
    cfg = _load(args.config)
    space = FemSpace(generate_uniform(cfg.nx, cfg.ny, cfg.domain))
    report = analysis.equivalence_report(space, cfg.epsilon, trials=args.trials, seed=cfg.seed)
    for name, diff in report.max_diff.items():
        flag = "PASS" if report.passed[name] else "FAIL"
        print(f"{flag}  {name:28s} max |diff| = {diff:.3e}")
    return 0 if report.all_passed else 1


def _cmd_precond(args) -> int:
    cfg = _load(args.config)
    rows = analysis.precond_benchmark(cfg.bench_levels, cfg.epsilon, cfg.k[0],
                                      rect=cfg.domain, tol=cfg.bench_tol, seed=cfg.seed)
    print(analysis.format_bench_table(rows))
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "precond_bench.csv").open("w") as fh:
        fh.write("dof,cg_iters,pcg_iters,lanczos_min,lanczos_max\n")
        for r in rows:
            fh.write(f"{r.dof},{r.cg_iters},{r.pcg_iters},"
                     f"{r.lanczos_min:.17g},{r.lanczos_max:.17g}\n")
    return 0


def _sweep_one(job):
    cfg, outdir = job
    return execute_run(cfg, outdir)


def _cmd_sweep(args) -> int:
    cfg = _load(args.config)
    key, _, values = args.vary.partition("=")
    key = key.strip()
    values = [v.strip() for v in values.split(",") if v.strip()]
    if not key or not values:
        raise PhaseFieldError("--vary expects key=v1,v2,...")
    base = Path(args.output or cfg.output)
    jobs = [(cfg.with_value(key, v), base / f"{key}={v}") for v in values]
    workers = max(1, min(len(jobs), int(os.environ.get("PHASEFIELD_THREADS", os.cpu_count() or 1))))
    if workers == 1:
        summaries = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    status = 0
    for s in summaries:
        print(f"wrote {s['output']} ({s['steps']} steps)")
        if s["failure"]:
            print(f"error: {s['failure']}", file=sys.stderr)
            status = 1
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasefield", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("--output", "-o")
    r.add_argument("--quiet", "-q", action="store_true")
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("equivalence", help="check the scheme equivalences")
    e.add_argument("config")
    e.add_argument("--trials", type=int, default=2)
    e.set_defaults(func=_cmd_equivalence)

    b = sub.add_parser("precond-bench", help="CG versus PCG iteration table")
    b.add_argument("config")
    b.add_argument("--output", "-o")
    b.set_defaults(func=_cmd_precond)

    s = sub.add_parser("sweep", help="run variants of a config")
    s.add_argument("config")
    s.add_argument("--vary", required=True, metavar="KEY=V1,V2,...")
    s.add_argument("--output", "-o")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PhaseFieldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
