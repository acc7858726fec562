"""solve -> verify -> compile -> capacity check -> simulate -> evaluate."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .constraints import build_problem, resolve_clocks
from .gcl import GclError, compile_gcls, evaluate, infeasible_ports, write_gcls
from .model import Method
from .scenario import Scenario, scenario_to_dict
from .simulator import SimulationError, phase_sweep
from .solver import DEFAULT_NODE_BUDGET, export_lp, format_solution, solve, verify_solution

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_CRITERIA = 3
EXIT_BUDGET = 4


@dataclass
class RunReport:
    scenario: Scenario
    method: Method
    status: str = "ok"  # ok | infeasible | budget | criteria-failed | error
    failed_stage: str | None = None
    error: str | None = None
    solution: object = None
    gcl_paths: list = field(default_factory=list)
    sim: object = None
    evaluation: object = None
    timings: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "budget": EXIT_BUDGET,
                "criteria-failed": EXIT_CRITERIA, "error": EXIT_CRITERIA}[self.status]

    def to_dict(self, timings=True) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "scenario_digest": self.scenario.digest(),
            "scenario": scenario_to_dict(self.scenario),
            "method": self.method.value,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "solution": None,
            "gcl_files": self.gcl_paths,
            "simulation": None if self.sim is None else self.sim.to_dict(),
            "evaluation": None if self.evaluation is None else self.evaluation.to_dict(),
        }
        if self.solution is not None:
            sol = self.solution.to_dict()
            sol.get("stats", {}).pop("wall_time_s", None)
            out["solution"] = sol
        if timings:
            out["timings_s"] = {k: round(v, 6) for k, v in self.timings.items()}
            if self.solution is not None:
                out["timings_s"]["solver_wall"] = round(self.solution.wall_time, 6)
        return out

    def to_json(self, timings=True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True) + "\n"


def run_pipeline(scenario: Scenario, method=None, *, out_dir=None, node_budget=DEFAULT_NODE_BUDGET,
                 sim_duration=None, phase_steps=None, phase_shift=0, simulate=True) -> RunReport:
    method = Method(method or scenario.method or "WCD")
    rep = RunReport(scenario, method)
    net, streams = scenario.network, scenario.streams
    clocks = resolve_clocks(net)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    def stage(name):
        rep.timings[name] = time.perf_counter()

    def done(name):
        rep.timings[name] = time.perf_counter() - rep.timings[name]

    def fail(name, status, msg):
        rep.status, rep.failed_stage, rep.error = status, name, msg
        log.warning("%s failed: %s", name, msg)
        return _finish(rep, out)

    stage("solve")
    problem = build_problem(net, streams, method, clocks)
    sol = solve(problem, node_budget)
    done("solve")
    rep.solution = sol
    if out:
        (out / "model.lp").write_text(export_lp(problem))
        (out / "constraints.txt").write_text(problem.dump())
    if sol.status == "infeasible":
        return fail("solve", "infeasible", sol.reason)
    if not sol.values and problem.vars:
        return fail("solve", "budget", sol.reason)
    if out:
        (out / "solution.txt").write_text(format_solution(problem, sol))

    stage("verify")
    bad = verify_solution(problem, sol)
    done("verify")
    if bad:
        return fail("verify", "error", f"{len(bad)} violated constraints, first: {bad[0]}")

    stage("compile")
    try:
        gcls = compile_gcls(sol.offsets, net, streams, method, clocks)
    except GclError as exc:
        return fail("compile", "error", str(exc))
    if out:
        rep.gcl_paths = [Path(p).name for p in write_gcls(gcls, out)]
    done("compile")

    stage("capacity")
    over = infeasible_ports(streams, net, method, clocks)
    done("capacity")

    max_lat = {s.id: sol.latencies.get(s.id) for s in streams}
    if simulate:
        stage("simulate")
        try:
            rep.sim = phase_sweep(net, streams, gcls, sol.offsets,
                                  duration=sim_duration or scenario.sim.duration,
                                  steps=phase_steps or scenario.sim.sync_phase_steps,
                                  shift=phase_shift)
        except SimulationError as exc:
            done("simulate")
            return fail("simulate", "error", str(exc))
        done("simulate")
        max_lat = rep.sim.max_latency()

    stage("evaluate")
    rep.evaluation = evaluate(streams, net, method, max_lat, clocks)
    done("evaluate")
    if over:
        return fail("capacity", "infeasible", "window demand exceeds the cycle on "
                    + ", ".join(f"{a}->{b}" for a, b in over))
    if sol.status == "budget":
        rep.status = "budget"
    elif not rep.evaluation.valid or (rep.sim is not None and (rep.sim.drops or rep.sim.outside_window)):
        rep.status = "criteria-failed"
    return _finish(rep, out)


def _finish(rep: RunReport, out) -> RunReport:
    if out:
        (out / "report.json").write_text(rep.to_json())
    return rep
