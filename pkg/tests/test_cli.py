import json

import pytest

from edlm_mpc.cli import fixture_path, main


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


SMALL = {"plant": "example1", "controller": {"N": 4, "lambda": 1.0}, "reference": "unit_ramp", "steps": 50}


def test_malformed_json_reports_line(tmp_path, capsys):
    path = write(tmp_path, '{\n  "plant": "example1",\n  "steps": ,\n}')
    assert main(["run", path, "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err
    assert ":3:" in err


@pytest.mark.parametrize(
    "doc",
    [
        {**SMALL, "bogus": 1},
        {**SMALL, "controller": {"N": 4, "lambda": 1.0, "gamma": 2}},
        {**SMALL, "controller": {"N": 0, "lambda": 1.0}},
        {**SMALL, "plant": "example9"},
        {**SMALL, "expect": {"nonsense": 1}},
    ],
)
def test_invalid_scenarios_rejected(tmp_path, capsys, doc):
    assert main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == 2


def test_steps_override(tmp_path):
    out = tmp_path / "o"
    assert main(["run", write(tmp_path, SMALL), "--out", str(out), "--steps", "10"]) == 0
    rows = (out / "trace.csv").read_text().strip().splitlines()
    assert len(rows) == 11
    assert rows[0].startswith("k,y1,ystar1,u1")
    assert len((out / "pjm.csv").read_text().strip().splitlines()) == 11


def test_fixture_report(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(fixture_path("example1_lambda1")), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"]
    assert rep["metrics"]["steady_error"][0] == pytest.approx(2 / 15, abs=1e-6)
    assert rep["analysis_at_last_step"]["analysis1"]["stability"]["stable"]


def test_failed_expectation_sets_exit(tmp_path):
    doc = {**SMALL, "steps": 300, "window": [200, 300], "expect": {"steady_error": [0.5], "atol": 1e-6}}
    assert main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1


def test_analyze_unstable(capsys):
    assert main(["analyze", str(fixture_path("unstable_custom"))]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["analysis1"]["stability"]["stable"] is False
    assert rep["analysis1"]["stability"]["max_modulus"] > 1.0


def test_run_unstable_diverges(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(fixture_path("unstable_custom")), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["diverged"]


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    path = str(fixture_path("example4_uimpc"))
    assert main(["run", path, "--out", str(a), "--steps", "60"]) in (0, 1)
    assert main(["run", path, "--out", str(b), "--steps", "60"]) in (0, 1)
    for name in ("trace.csv", "pjm.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_reproduce_table1(capsys):
    assert main(["reproduce", "table1"]) == 0
    out = capsys.readouterr().out
    assert "0.1333" in out
