"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .scenario import load_scenario, with_value
from .solver import build_model, run
from .summary import summarize_scenario
from .syntax import NetlistError
from .topology import parse_netlist, validate

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("dcmg")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        text = Path(args.netlist).read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"error: cannot read {args.netlist}: {exc.strerror or exc}")
        return EXIT_IO
    try:
        topo = parse_netlist(text, source=args.netlist)
    except NetlistError as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    report = validate(topo)
    if not report.ok:
        for f in report:
            _err(str(f))
        return EXIT_INVALID
    print(f"{args.netlist}: ok ({len(topo.nodes)} nodes, {len(topo.edges)} edges)")
    return EXIT_OK


def _load(path):
    """Returns (scenario, exit code)."""
    try:
        return load_scenario(path), EXIT_OK
    except (OSError, FileNotFoundError) as exc:
        _err(f"error: {exc}")
        return None, EXIT_IO
    except (NetlistError, ValueError) as exc:
        _err(f"error: {exc}")
        return None, EXIT_INVALID


def _apply_solver_flags(scn, args):
    solver = scn.solver
    if args.dt is not None:
        solver = replace(solver, dt=args.dt)
    if args.method is not None:
        solver = replace(solver, method=args.method)
    if args.t_end is not None:
        solver = replace(solver, t_end=args.t_end)
    if args.decimation is not None:
        solver = replace(solver, record_decimation=args.decimation)
    return replace(scn, solver=solver)


def _simulate(scn):
    model = build_model(scn.topology, scn)
    result = run(model, scn.solver)
    div = str(result.diverged) if result.diverged is not None else None
    return result, summarize_scenario(result.series, scn, divergence=div)


def cmd_run(args) -> int:
    scn, code = _load(args.scenario)
    if scn is None:
        return code
    try:
        scn = _apply_solver_flags(scn, args)
        result, summary = _simulate(scn)
    except (NetlistError, ValueError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    try:
        result.series.to_csv(args.out_csv)
    except OSError as exc:
        _err(f"error: cannot write {args.out_csv}: {exc.strerror or exc}")
        return EXIT_IO
    if args.summary_json:
        print(json.dumps(summary.to_dict(), indent=2))
    else:
        print(summary.to_text())
    if result.diverged is not None:
        _err(f"error: {result.diverged}")
        return EXIT_DIVERGED
    return EXIT_OK


def _sweep_one(scn):
    _, summary = _simulate(scn)
    return summary


def cmd_sweep(args) -> int:
    scn, code = _load(args.scenario)
    if scn is None:
        return code
    scn = _apply_solver_flags(scn, args)
    try:
        variants = [with_value(scn, args.param, v) for v in args.values]
    except KeyError as exc:
        _err(f"error: {exc.args[0]}")
        return EXIT_INVALID
    except (NetlistError, ValueError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    if not variants:
        print("no values; nothing to run")
        return EXIT_OK
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_sweep_one, variants))
    else:
        summaries = [_sweep_one(v) for v in variants]

    rows = []
    for value, s in zip(args.values, summaries):
        peak = max((abs(e.peak_power) for e in s.ess.values()), default=0.0)
        rows.append({"value": value, "max_sharing_error": s.max_sharing_error,
                     "max_bus_deviation_V": s.max_bus_deviation,
                     "ess_peak_power_W": peak, "diverged": s.diverged})
    peaks = [r["ess_peak_power_W"] for r in rows]
    if all(a <= b for a, b in zip(peaks, peaks[1:])):
        trend = "non-decreasing"
    elif all(a >= b for a, b in zip(peaks, peaks[1:])):
        trend = "non-increasing"
    else:
        trend = "not monotonic"
    if args.summary_json:
        print(json.dumps({"param": args.param, "runs": rows, "ess_peak_trend": trend}, indent=2))
    else:
        print(f"{args.param:>16} {'sharing err':>12} {'bus dev [V]':>12} "
              f"{'ESS peak [kW]':>14} diverged")
        for r in rows:
            print(f"{r['value']:>16} {r['max_sharing_error']:12.3e} "
                  f"{r['max_bus_deviation_V']:12.2f} {r['ess_peak_power_W'] / 1e3:14.2f} "
                  f"{r['diverged']}")
        print(f"ESS peak power across values: {trend}")
    return EXIT_DIVERGED if any(r["diverged"] for r in rows) else EXIT_OK


def cmd_acceptance(args) -> int:
    from .acceptance import run_all
    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def _solver_flags(p):
    p.add_argument("--dt", type=float, help="integration step (s)")
    p.add_argument("--method", choices=["euler", "rk4"])
    p.add_argument("--t-end", type=float, help="simulated duration (s)")
    p.add_argument("--decimation", type=int, help="record every N-th step")
    p.add_argument("--summary-json", action="store_true",
                   help="print the summary as JSON instead of text")
    p.add_argument("--seed", type=int, default=None,
                   help="reserved; simulations are deterministic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcmg", description="DC microgrid simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a netlist against the connection rules")
    p.add_argument("netlist")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write a CSV")
    p.add_argument("scenario", help="scenario file or bundled name (e.g. sps4zone)")
    p.add_argument("out_csv")
    _solver_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a scalar scenario setting")
    p.add_argument("scenario")
    p.add_argument("param", help="e.g. ess.omega, droop.r_base, node.g1.C_dc")
    p.add_argument("values", nargs="*")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("acceptance", help="run the built-in acceptance checks")
    p.add_argument("--quick", action="store_true", help="shorter runs where possible")
    p.set_defaults(func=cmd_acceptance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
