import random
import re
from dataclasses import replace

import pytest

from oracle import brute_force, random_instance
from tsngcl.constraints import build_problem
from tsngcl.model import Device, DeviceKind, Link, Network, StreamSpec
from tsngcl.scenario import case_study
from tsngcl.solver import (ScheduleSolution, export_lp, format_solution, import_solution, solve,
                           solution_from_values, verify_solution)

MT = 100_000


def small_net():
    devs = [Device("A", DeviceKind.END_STATION, is_grandmaster=True), Device("B", DeviceKind.END_STATION),
            Device("S", DeviceKind.SWITCH), Device("C", DeviceKind.END_STATION)]
    return Network.build(devs, [Link("A", "S"), Link("B", "S"), Link("S", "C"), Link("A", "C")])


def st(sid, route, period_mt, wire=200, deadline_mt=None):
    hops = tuple(zip(route, route[1:]))
    return StreamSpec(sid, hops, wire - 54, period_mt * MT, (deadline_mt or period_mt) * MT, wire)


class TestSolve:
    def test_single_stream_no_contention(self):
        net = small_net()
        p = build_problem(net, [st("a", ["A", "S", "C"], 100)], "WCD")
        sol = solve(p)
        assert sol.status == "optimal"
        assert sol.offsets[("a", ("A", "S"))] == 0
        assert sol.objective == 0
        assert sol.latencies["a"] == p.latencies[0].lambda_min * MT

    def test_two_identical_streams_enumerated(self):
        net = small_net()
        streams = [st("a", ["A", "C"], 100), st("b", ["A", "C"], 100)]
        p = build_problem(net, streams, "WCD")
        sol = solve(p)
        # exhaustive: every (phi_a, phi_b) in [0, hp)^2 whose windows are disjoint mod hp
        sep = 17  # ceil(146*8/100 + 1) = ceil(16.0 + 1)
        feasible = [(x, y) for x in range(100) for y in range(100)
                    if sep <= (y - x) % 100 <= 100 - sep]
        assert feasible and sol.objective == 0
        a, b = sol.values
        assert sep <= (b - a) % 100 <= 100 - sep
        assert (a, b) == min(feasible)

    def test_case_study_wca_zero_objective(self):
        sc = case_study(1)
        sol = solve(build_problem(sc.network, sc.streams, "WCA"))
        assert sol.status == "optimal" and sol.objective == 0
        assert set(sol.latencies.values()) == {39_682_000}

    def test_deterministic(self):
        sc = case_study(2)
        p = build_problem(sc.network, sc.streams, "WCD")
        a, b = solve(p), solve(p)
        assert a.values == b.values and a.objective == b.objective

    def test_infeasible_reported(self):
        net = small_net()
        # two frames of 60 mt cannot share a 100 mt period
        streams = [st("a", ["A", "C"], 100, wire=750), st("b", ["A", "C"], 100, wire=750)]
        sol = solve(build_problem(net, streams, "WCD"))
        assert sol.status == "infeasible" and sol.reason

    def test_budget_flagged(self):
        sc = case_study(2)
        sol = solve(build_problem(sc.network, sc.streams, "WCD"), node_budget=1)
        assert sol.status in ("budget", "infeasible")
        assert sol.status == "budget" or sol.reason.startswith("node budget")

    def test_relaxing_deadline_never_hurts(self):
        sc = case_study(3)
        tight = solve(build_problem(sc.network, sc.streams, "NCD"))
        loose = solve(build_problem(sc.network, [replace(s, deadline=s.deadline * 2) for s in sc.streams], "NCD"))
        assert loose.objective <= tight.objective


class TestVerify:
    def test_solver_output_passes(self):
        sc = case_study(2)
        p = build_problem(sc.network, sc.streams, "NCD")
        assert verify_solution(p, solve(p)) == []

    def test_perturbed_consecutive_offset_reported(self):
        sc = case_study(1)
        p = build_problem(sc.network, sc.streams, "WCA")
        sol = solve(p)
        vals = list(sol.values)
        vals[1] += 1  # s1 on SW1->SW2, pinned to its predecessor
        bad = verify_solution(p, vals)
        assert any(v.startswith("pinned s1#1") for v in bad)

    def test_wrap_violation_reported(self):
        net = small_net()
        streams = [st("a", ["A", "C"], 100), st("b", ["A", "C"], 100)]
        p = build_problem(net, streams, "WCD")
        bad = verify_solution(p, [0, 100])
        assert any(v.startswith("non-overlap") for v in bad)

    def test_dimension_mismatch(self):
        p = build_problem(small_net(), [st("a", ["A", "C"], 100)], "WCD")
        assert verify_solution(p, [0, 1]) != []


class TestLp:
    def test_empty_stub(self):
        p = build_problem(small_net(), [], "WCD")
        text = export_lp(p)
        assert "Minimize" in text and "End" in text and "Binaries" not in text

    def test_one_disjunction_counts(self):
        from tsngcl.constraints import DiffConstraint, Disjunction, OffsetVar, ProblemInstance
        from tsngcl.model import Method
        d = Disjunction((DiffConstraint(1, 0, -10),), (DiffConstraint(0, 1, -10),), "x", ("A", "C"))
        p = ProblemInstance(Method.WCD, 100, [OffsetVar("a", ("A", "C"), 100), OffsetVar("b", ("A", "C"), 100)],
                            [], [d], [])
        text = export_lp(p)
        binaries = text.split("Binaries\n")[1].split("General")[0].split()
        assert binaries == ["z0"]
        assert len(re.findall(r"^ d0l\d+:", text, re.M)) == 1
        assert len(re.findall(r"^ d0r\d+:", text, re.M)) == 1
        assert text.count(" z0 ") == 2
        assert solve(p).status == "optimal"

    def test_pair_of_streams_has_wrap_disjunctions(self):
        p = build_problem(small_net(), [st("a", ["A", "C"], 100), st("b", ["A", "C"], 100)], "WCD")
        assert sorted(d.tag.split()[0] for d in p.disjunctions) == [
            "sched-duration", "sched-duration-wrap", "sched-duration-wrap"]
        assert export_lp(p).count("\n z") == 3

    def test_case_study_variables(self):
        sc = case_study(2)
        p = build_problem(sc.network, sc.streams, "WCD")
        text = export_lp(p)
        general = text.split("General\n")[1].split("End")[0].split()
        assert len(general) == 9

    def test_external_optimum_round_trips(self, tmp_path):
        highspy = pytest.importorskip("highspy")
        sc = case_study(3)
        p = build_problem(sc.network, sc.streams, "NCD")
        f = tmp_path / "m.lp"
        f.write_text(export_lp(p))
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.readModel(str(f))
        h.run()
        names = [h.getColName(i)[1] for i in range(h.getNumCol())]
        text = "".join(f"{n}={v}\n" for n, v in zip(names, h.getSolution().col_value))
        imported = import_solution(p, text)
        assert verify_solution(p, imported) == []
        assert imported.objective == solve(p).objective

    def test_import_own_format(self):
        sc = case_study(1)
        p = build_problem(sc.network, sc.streams, "WCD")
        sol = solve(p)
        back = import_solution(p, format_solution(p, sol))
        assert back.values == sol.values

    def test_import_errors(self):
        p = build_problem(small_net(), [st("a", ["A", "C"], 100)], "WCD")
        with pytest.raises(ValueError, match="line 1"):
            import_solution(p, "garbage\n")
        with pytest.raises(ValueError, match="misses"):
            import_solution(p, "# nothing\n")


def test_solution_dict_is_serialisable():
    import json
    sc = case_study(1)
    p = build_problem(sc.network, sc.streams, "WCD")
    d = solve(p).to_dict()
    json.dumps(d)
    assert d["status"] == "optimal" and len(d["offsets"]) == 9


def test_solution_from_values_matches_objective():
    sc = case_study(1)
    p = build_problem(sc.network, sc.streams, "NCD")
    sol = solve(p)
    again = solution_from_values(p, sol.values)
    assert isinstance(again, ScheduleSolution) and again.objective == sol.objective


@pytest.mark.parametrize("seed", range(6))
def test_matches_brute_force_sample(seed):
    rng = random.Random(1000 + seed)
    for _ in range(10):
        net, streams, method = random_instance(rng)
        sol = solve(build_problem(net, streams, method))
        expected, _ = brute_force(net, streams, method)
        got = sol.objective if sol.status == "optimal" else None
        assert got == expected
