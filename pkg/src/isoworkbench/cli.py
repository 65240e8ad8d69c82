"""Command-line driver: ``isoworkbench <subcommand> [options]``.

Every subcommand writes ``report.json`` (plus ``report.meta.json`` with
runtimes, ``report_margins.csv`` and any tables or figures) to the output
directory and exits 0 iff every executed check passes.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from .report import ConfigError, RunConfig, SuiteResult, output_dir, write_report
from .suites import SUITES

TOLERANCE_KEYS = ("eps_grid", "eps_quad", "volume_tol")


def _point(text: str):
    try:
        u, v = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'u,v', got {text!r}")
    return (u, v)


def _tolerance(text: str):
    key, sep, val = text.partition("=")
    key = key.strip().replace("-", "_")
    if not sep or key not in TOLERANCE_KEYS:
        raise argparse.ArgumentTypeError(f"expected KEY=VAL with KEY in {', '.join(TOLERANCE_KEYS)}")
    try:
        return key, float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tolerance {key} needs a number, got {val!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isoworkbench", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(SUITES) + ["all"])
    p.add_argument("--grid", type=int, default=256, help="raster resolution G (64..8192)")
    p.add_argument("--balls", type=int, default=20, help="number of explicit balls (1..24)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="processes for independent suites in 'all'")
    p.add_argument("--out", default=None, help="output directory (ISO_WORKBENCH_OUT overrides)")
    p.add_argument("--tolerance", type=_tolerance, action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--K", type=float, default=0.0)
    p.add_argument("--N", type=float, default=2.0)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--center", type=_point, default=None, metavar="U,V")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--set", default=None, metavar="FILE", help="PBM raster (compete) or shape file (deform)")
    p.add_argument("--samples", type=int, default=None)
    return p


def _run_one(name, config, opts) -> SuiteResult:
    try:
        return SUITES[name](config, opts)
    except (ValueError, RuntimeError, OSError) as exc:
        return SuiteResult(name, error=f"{type(exc).__name__}: {exc}")


def _run_one_packed(args):
    return _run_one(*args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(grid=args.grid, balls=args.balls, seed=args.seed, workers=args.workers,
                           **dict(args.tolerance))
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    opts = {"K": args.K, "N": args.N, "R": args.R, "center": args.center, "radius": args.radius,
            "C": args.C, "set": args.set, "samples": args.samples}
    names = sorted(SUITES) if args.command == "all" else [args.command]
    if args.command == "all":
        # the smoke configuration keeps the defaults of each suite
        opts = {"K": -1.0, "N": 3.0, "R": 1.0, "samples": args.samples}
    if config.workers > 1 and len(names) > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            suites = list(ex.map(_run_one_packed, [(n, config, opts) for n in names]))
    else:
        suites = [_run_one(n, config, opts) for n in names]
    out = output_dir(args.out, "isoworkbench-out")
    path = write_report(config, suites, out)
    ok = all(s.passed for s in suites)
    for s in suites:
        n_fail = sum(not r.passed for r in s.records)
        status = "ERROR " + s.error if s.error else ("pass" if s.passed else f"FAIL ({n_fail} checks)")
        print(f"{s.name:18s} {len(s.records):4d} checks  {status}")
        if s.name == "mcp-const" and hasattr(s, "value"):
            print(format(s.value, ".15g"))
    print(f"report: {path}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
