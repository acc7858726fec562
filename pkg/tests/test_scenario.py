from fractions import Fraction

import pytest

from tsngcl.scenario import (CASE_STUDY_DRIFTS, ScenarioError, bundled_scenarios, case_study, load_bundled,
                             parse_scenario, scenario_from_dict, scenario_to_dict)

BASE = """\
name: tiny
devices:
  - {id: A, kind: end-station, grandmaster: true}
  - {id: S, kind: switch, drift_ppm: 2.5}
  - {id: B, kind: end-station, drift_ppm: -1/3}
links:
  - {from: A, to: S}
  - {from: S, to: B}
streams:
  - id: x
    route: [A, S, B]
    payload_bytes: 100
    period_ns: 100000
    deadline_ns: 50000
"""


def test_minimal_scenario():
    sc = parse_scenario(BASE)
    assert sc.name == "tiny" and sc.method is None
    assert sc.network.drift("S") == Fraction(5, 2)
    assert sc.network.drift("B") == Fraction(-1, 3)
    assert sc.streams[0].route == (("A", "S"), ("S", "B"))
    assert ("B", "S") in sc.network.links  # full duplex by default


def test_error_carries_line_number():
    text = BASE.replace("period_ns: 100000", "period_ns: fast")
    with pytest.raises(ScenarioError) as e:
        parse_scenario(text, "tiny.yaml")
    assert e.value.line == 13
    assert str(e.value).startswith("tiny.yaml:13:")


def test_unknown_device_in_route():
    with pytest.raises(ScenarioError) as e:
        parse_scenario(BASE.replace("[A, S, B]", "[A, Q, B]"))
    assert e.value.line == 11


def test_route_without_link():
    with pytest.raises(ScenarioError):
        parse_scenario(BASE.replace("[A, S, B]", "[A, B]"))


def test_yaml_syntax_error_line():
    with pytest.raises(ScenarioError) as e:
        parse_scenario(BASE + "  - {id: y, route: [A\n")
    assert e.value.line is not None and e.value.line >= 14


def test_empty_and_non_mapping():
    with pytest.raises(ScenarioError):
        parse_scenario("")
    with pytest.raises(ScenarioError):
        parse_scenario("- 1\n- 2\n")


def test_unknown_method():
    with pytest.raises(ScenarioError, match="method"):
        parse_scenario(BASE + "method: XYZ\n")


def test_dict_round_trip_keeps_digest():
    sc = case_study(3)
    again = scenario_from_dict(scenario_to_dict(sc))
    assert again.digest() == sc.digest()
    assert again.network.drift("ES1") == -5


def test_bundled_files():
    names = bundled_scenarios()
    assert {"case_study.yaml", "case_study_s1.yaml", "case_study_s2.yaml", "case_study_s3.yaml"} <= set(names)
    for k, drifts in CASE_STUDY_DRIFTS.items():
        sc = load_bundled(f"case_study_s{k}.yaml")
        for dev, ppm in drifts.items():
            assert sc.network.drift(dev) == ppm


def test_case_study_parameters():
    sc = case_study(2)
    assert sc.network.grandmaster == "ES2"
    assert sc.network.sync.sync_period == 125_000_000_000
    assert [s.period // 1_000_000 for s in sc.streams] == [100, 150, 300]
    assert all(s.deadline == 45_000_000 for s in sc.streams)


def test_with_drifts_changes_digest():
    sc = case_study(None)
    assert sc.with_drifts({"SW1": Fraction(1)}).digest() != sc.digest()
