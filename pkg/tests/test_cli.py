import json
import subprocess
import sys
from importlib import resources

import pytest

from tsngcl.cli import main, parse_duration, parse_range


@pytest.fixture
def tight(tmp_path):
    src = tmp_path / "tight.yaml"
    raw = resources.files("tsngcl").joinpath("scenarios", "case_study.yaml").read_text()
    src.write_text(raw.replace("deadline_ns: 45000", "deadline_ns: 1000"))
    return str(src)


def test_parse_duration():
    assert parse_duration("1s") == 10**12
    assert parse_duration("200ms") == 200 * 10**9
    assert parse_duration("5") == 5 * 10**9
    with pytest.raises(Exception):
        parse_duration("soon")


def test_parse_range():
    assert parse_range("10:500") == (10, 500)
    with pytest.raises(Exception):
        parse_range("500:10")


def test_validate_bundled(capsys):
    assert main(["validate", "case_study_s1.yaml"]) == 0
    assert "hyperperiod 3000 mt" in capsys.readouterr().out


def test_usage_errors(tmp_path):
    assert main([]) == 1
    assert main(["solve", "case_study.yaml", "--method", "FOO"]) == 1
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("devices: [\n")
    assert main(["validate", str(bad)]) == 1


def test_no_method(tmp_path):
    assert main(["solve", "case_study.yaml", "--out-dir", str(tmp_path)]) == 1


def test_solve_writes_artifacts(tmp_path, capsys):
    assert main(["solve", "case_study_s3.yaml", "--method", "NCD", "--out-dir", str(tmp_path)]) == 0
    for name in ("model.lp", "constraints.txt", "solution.txt", "solution.json"):
        assert (tmp_path / name).exists()
    assert "s1: latency" in capsys.readouterr().out


def test_solve_infeasible_deadline(tmp_path, tight):
    assert main(["solve", tight, "--method", "WCA", "--out-dir", str(tmp_path)]) == 2


def test_budget_exit(tmp_path):
    code = main(["solve", "case_study_s2.yaml", "--method", "WCD", "--node-budget", "1", "--out-dir", str(tmp_path)])
    assert code == 4


def test_compile_from_solution_file(tmp_path):
    assert main(["solve", "case_study_s1.yaml", "--method", "WCA", "--out-dir", str(tmp_path)]) == 0
    assert main(["compile", "case_study_s1.yaml", "--method", "WCA", "--solution", str(tmp_path / "solution.txt"),
                 "--out-dir", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("gcl_*.csv"))) == 4


def test_tampered_solution_rejected(tmp_path):
    main(["solve", "case_study_s1.yaml", "--method", "WCA", "--out-dir", str(tmp_path)])
    f = tmp_path / "solution.txt"
    lines = f.read_text().splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("phi_s1_SW1_SW2"))
    name, v = lines[i].split("=")
    lines[i] = f"{name}={int(v) + 1}"
    f.write_text("\n".join(lines) + "\n")
    assert main(["compile", "case_study_s1.yaml", "--method", "WCA", "--solution", str(f),
                 "--out-dir", str(tmp_path)]) == 1


def test_simulate_trace(tmp_path):
    code = main(["simulate", "case_study_s1.yaml", "--method", "WCA", "--sim-duration", "5ms",
                 "--sync-phase-steps", "1", "--trace", "--out-dir", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "trace.csv").read_text().startswith("stream,")
    rep = json.loads((tmp_path / "sim_report.json").read_text())
    assert rep["drops"] == 0


def test_pipeline_pass_and_fail(tmp_path):
    ok = main(["pipeline", "case_study_s3.yaml", "--method", "NCD", "--sim-duration", "300ms",
               "--sync-phase-steps", "4", "--out-dir", str(tmp_path / "a")])
    assert ok == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["status"] == "ok" and report["scenario"]["name"]
    fail = main(["pipeline", "case_study_s1.yaml", "--method", "WCD", "--sim-duration", "300ms",
                 "--sync-phase-steps", "4", "--out-dir", str(tmp_path / "b")])
    assert fail == 3


def test_pipeline_infeasible(tmp_path, tight):
    assert main(["pipeline", tight, "--method", "NCA", "--out-dir", str(tmp_path)]) == 2


def test_sweep_small(tmp_path):
    code = main(["sweep", "--mode", "latency", "--methods", "WCD", "--steps", "2", "--out-dir", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "sweep_latency.csv").read_text().splitlines()
    assert rows[0].startswith("Ts_ms,drift_ppm,method") and len(rows) == 5


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "tsngcl.cli", "validate", "case_study.yaml"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "case-study" in r.stdout
