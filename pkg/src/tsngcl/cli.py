"""Command line: tsngcl {validate,solve,compile,simulate,pipeline,sweep}."""

from __future__ import annotations

import argparse
import json
import logging
import random
import re
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .constraints import build_problem, resolve_clocks
from .gcl import GclError, compile_gcls, write_gcls
from .model import Method, ModelError, hyperperiod_of
from .pipeline import EXIT_BUDGET, EXIT_CRITERIA, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, run_pipeline
from .scenario import ScenarioError, bundled_scenarios, load_bundled, load_scenario
from .simulator import SimulationError, phase_sweep
from .solver import (DEFAULT_NODE_BUDGET, export_lp, format_solution, import_solution, solve,
                     verify_solution)
from .sweep import SweepSpec, cells_to_csv, run_sweep

log = logging.getLogger("tsngcl")

_UNITS = {"s": 10**12, "ms": 10**9, "us": 10**6, "ns": 10**3, "ps": 1}


def parse_duration(text: str) -> int:
    """'1s', '250ms', '40us' ... to ps; a bare number is milliseconds."""
    m = re.fullmatch(r"\s*([0-9]+(?:\.[0-9]+)?)\s*(s|ms|us|ns|ps)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration '{text}'")
    ps = Fraction(m.group(1)) * _UNITS[m.group(2) or "ms"]
    if ps <= 0 or ps.denominator != 1:
        raise argparse.ArgumentTypeError(f"duration '{text}' must be a positive whole number of ps")
    return int(ps)


def parse_range(text: str) -> tuple[Fraction, Fraction]:
    try:
        lo, hi = (Fraction(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got '{text}'") from None
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"range '{text}' must satisfy 0 < LO <= HI")
    return lo, hi


def _load(arg: str):
    p = Path(arg)
    if not p.exists() and arg in bundled_scenarios():
        return load_bundled(arg)
    return load_scenario(p)


def _method(args, sc) -> Method:
    m = args.method or (sc.method.value if sc.method else None)
    if m is None:
        raise ScenarioError("no method given (use --method or set 'method' in the scenario)")
    return Method(m.upper())


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solution(args, sc, method):
    problem = build_problem(sc.network, sc.streams, method)
    if getattr(args, "solution", None):
        sol = import_solution(problem, Path(args.solution).read_text())
        bad = verify_solution(problem, sol)
        if bad:
            raise ScenarioError(f"solution file violates {len(bad)} constraints, first: {bad[0]}")
        return problem, sol
    return problem, solve(problem, args.node_budget)


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    hp = hyperperiod_of(sc.streams, sc.network.timebase) if sc.streams else 0
    clocks = resolve_clocks(sc.network)
    print(f"{sc.name}: {len(sc.network.devices)} devices, {len(sc.network.links)} links, "
          f"{len(sc.streams)} streams, hyperperiod {hp} mt, delta {float(clocks.delta_mt):g} mt")
    return EXIT_OK


def cmd_solve(args) -> int:
    sc = _load(args.scenario)
    method = _method(args, sc)
    out = _out(args)
    problem = build_problem(sc.network, sc.streams, method)
    (out / "model.lp").write_text(export_lp(problem))
    (out / "constraints.txt").write_text(problem.dump())
    sol = solve(problem, args.node_budget)
    (out / "solution.json").write_text(json.dumps(sol.to_dict(), indent=2, sort_keys=True) + "\n")
    if sol.status == "infeasible":
        print(f"infeasible: {sol.reason}")
        return EXIT_INFEASIBLE
    if not sol.values and problem.vars:
        print(f"budget: {sol.reason or 'no schedule found within the node budget'}")
        return EXIT_BUDGET
    (out / "solution.txt").write_text(format_solution(problem, sol))
    print(f"{method.value}: {sol.status}, objective {float(sol.objective):g} mt, {sol.nodes} nodes")
    for sid, lat in sorted(sol.latencies.items()):
        print(f"  {sid}: latency {lat / 1e6:.3f} us")
    return EXIT_BUDGET if sol.status == "budget" else EXIT_OK


def cmd_compile(args) -> int:
    sc = _load(args.scenario)
    method = _method(args, sc)
    _, sol = _solution(args, sc, method)
    if sol.status == "infeasible":
        print(f"infeasible: {sol.reason}")
        return EXIT_INFEASIBLE
    try:
        gcls = compile_gcls(sol.offsets, sc.network, sc.streams, method)
    except GclError as exc:
        print(f"compile failed: {exc}")
        return EXIT_CRITERIA
    for p in write_gcls(gcls, _out(args)):
        print(p)
    return EXIT_OK


def _shift(args, sc, steps) -> int:
    """Seeded offset added to every swept sync phase (0 without --seed)."""
    if args.seed is None:
        return 0
    return random.Random(args.seed).randrange(max(1, sc.network.sync.sync_period // steps))


def cmd_simulate(args) -> int:
    sc = _load(args.scenario)
    method = _method(args, sc)
    _, sol = _solution(args, sc, method)
    if sol.status == "infeasible":
        print(f"infeasible: {sol.reason}")
        return EXIT_INFEASIBLE
    gcls = compile_gcls(sol.offsets, sc.network, sc.streams, method)
    steps = args.sync_phase_steps or sc.sim.sync_phase_steps
    try:
        total = phase_sweep(sc.network, sc.streams, gcls, sol.offsets, duration=args.sim_duration or sc.sim.duration,
                            steps=steps, shift=_shift(args, sc, steps), trace=args.trace)
    except SimulationError as exc:
        print(f"simulation failed: {exc}")
        return EXIT_CRITERIA
    out = _out(args)
    (out / "sim_report.json").write_text(json.dumps(total.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.trace:
        (out / "trace.csv").write_text(total.trace_csv())
    for sid, st in sorted(total.streams.items()):
        print(f"{sid}: {st.samples} frames, latency [{st.min_latency / 1e6:.3f}, {st.max_latency / 1e6:.3f}] us, "
              f"jitter {st.jitter} ps, drops {st.drops}")
    bad = total.drops or any(s.deadline_violations for s in total.streams.values())
    return EXIT_CRITERIA if bad else EXIT_OK


def cmd_pipeline(args) -> int:
    sc = _load(args.scenario)
    method = _method(args, sc)
    steps = args.sync_phase_steps or sc.sim.sync_phase_steps
    rep = run_pipeline(sc, method, out_dir=args.out_dir, node_budget=args.node_budget,
                       sim_duration=args.sim_duration, phase_steps=steps, phase_shift=_shift(args, sc, steps))
    print(f"{sc.name} {method.value}: {rep.status}" + (f" at {rep.failed_stage}: {rep.error}" if rep.error else ""))
    if rep.sim is not None:
        for sid, st in sorted(rep.sim.streams.items()):
            print(f"  {sid}: latency [{st.min_latency / 1e6:.3f}, {st.max_latency / 1e6:.3f}] us, "
                  f"jitter {st.jitter} ps")
    if rep.evaluation is not None:
        ev = rep.evaluation
        print(f"  criteria 1 (deadlines): {'pass' if all(ev.deadlines_met.values()) else 'FAIL'}")
        print(f"  criteria 2 (capacity):  {'pass' if all(ev.feasible.values()) else 'FAIL'}")
        print(f"  criteria 3 (SC):        {float(ev.schedulability_cost):.4f}")
    return rep.exit_code


def cmd_sweep(args) -> int:
    sc = _load(args.base)
    spec = SweepSpec(*args.ts_range, args.steps, *args.drift_range, args.steps,
                     tuple(m.upper() for m in args.methods.split(",")), args.mode)
    cells = run_sweep(spec, sc.network, sc.streams)
    out = _out(args)
    path = out / f"sweep_{args.mode}.csv"
    path.write_text(cells_to_csv(cells))
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsngcl", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, solve_opts=True):
        p.add_argument("scenario", help="scenario YAML file or bundled scenario name")
        p.add_argument("--method", choices=[m.value for m in Method] + [m.value.lower() for m in Method])
        p.add_argument("--out-dir", default="out")
        if solve_opts:
            p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)

    def sim_opts(p):
        p.add_argument("--sim-duration", type=parse_duration, help="e.g. 1s, 200ms (bare number = ms)")
        p.add_argument("--sync-phase-steps", type=int)
        p.add_argument("--seed", type=int, help="randomly shifts the swept sync phases")

    p = sub.add_parser("validate", help="parse and check a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="compute offsets; writes solution, LP model and constraint dump")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compile", help="write per-port gate control lists")
    common(p)
    p.add_argument("--solution", help="name=value offsets file (default: solve first)")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("simulate", help="simulate compiled schedules under clock drift")
    common(p)
    p.add_argument("--solution")
    p.add_argument("--trace", action="store_true", help="write per-frame trace CSV of the first phase")
    sim_opts(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="solve, compile, simulate and evaluate")
    common(p)
    sim_opts(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="grid over sync period and relative drift")
    p.add_argument("--base", default="case_study_s2.yaml")
    p.add_argument("--mode", choices=["sc", "latency"], default="sc")
    p.add_argument("--methods", default="WCA,NCA")
    p.add_argument("--ts-range", type=parse_range, default=(Fraction(10), Fraction(500)), help="ms, LO:HI")
    p.add_argument("--drift-range", type=parse_range, default=(Fraction(10), Fraction(200)), help="ppm, LO:HI")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
