import csv
import io
import json
import math

import pytest

from src.inspect_state import main as inspect_main
from src.main import main


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for key in ("STAGES", "EPSILON", "L1", "STATE_FILE", "MATRIX_CEILING"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture(scope="module")
def state_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "s.json"
    args = ["construct", "--stages", "1", "--epsilon", "0.1", "--l1", "2", "--out", str(path)]
    assert main(args) == 0
    return path


def _csv_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_construct_is_byte_identical(tmp_path, state_file):
    again = tmp_path / "again.json"
    args = ["construct", "--stages", "1", "--epsilon", "0.1", "--l1", "2", "--out", str(again)]
    assert main(args) == 0
    assert again.read_bytes() == state_file.read_bytes()
    assert len(json.loads(again.read_text())["stages"]) == 1


def test_construct_rejects_large_epsilon(tmp_path, capsys):
    out = str(tmp_path / "x.json")
    code = main(["construct", "--stages", "1", "--epsilon", "0.3", "--out", out])
    assert code == 2
    assert "epsilon" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


def test_usage_errors_exit_two():
    assert main(["nonsense"]) == 2
    assert main(["spectrum"]) == 2


def test_spectrum_free_box(capsys):
    assert main(["spectrum", "--box", "3", "--lam", "0"]) == 0
    values = sorted(float(r["eigenvalue"]) for r in _csv_rows(capsys.readouterr().out))
    assert values == pytest.approx([-math.sqrt(2), 0.0, math.sqrt(2)], abs=1e-12)


def test_spectrum_single_site(capsys):
    assert main(["spectrum", "--box", "1", "--lam", "0.7"]) == 0
    rows = _csv_rows(capsys.readouterr().out)
    assert [float(r["eigenvalue"]) for r in rows] == [0.7]


def test_spectrum_reference_state(state_file, capsys):
    assert main(["spectrum", "--state", str(state_file), "--box", "1000"]) == 0
    values = [float(r["eigenvalue"]) for r in _csv_rows(capsys.readouterr().out)]
    assert len(values) == 1000
    assert sum(abs(v) > 2.05 for v in values) <= 2


def test_spectrum_ceiling_breach(tmp_path):
    cfg = tmp_path / "run.env"
    cfg.write_text("MATRIX_CEILING=10\n", encoding="utf-8")
    assert main(["--config", str(cfg), "spectrum", "--box", "11"]) == 2


def test_evaluate_zero_range(capsys):
    assert main(["evaluate", "--lam", "0", "--t-start", "0", "--t-stop", "0"]) == 0
    rows = _csv_rows(capsys.readouterr().out)
    assert len(rows) == 1
    assert float(rows[0]["t"]) == 0.0
    assert float(rows[0]["abs"]) == pytest.approx(1.0, abs=1e-12)


def test_evaluate_short_times_with_svg(tmp_path):
    out, svg = tmp_path / "trace.csv", tmp_path / "trace.svg"
    args = ["evaluate", "--lam", "0", "--t-stop", "0.1", "--step", "0.02"]
    assert main(args + ["--out", str(out), "--svg", str(svg)]) == 0
    rows = _csv_rows(out.read_text())
    assert len(rows) == 6
    mods = [float(r["abs"]) for r in rows]
    assert all(m > 0.99 for m in mods)
    assert mods == sorted(mods, reverse=True)
    assert all(float(r["error_radius"]) <= 1e-6 for r in rows)
    assert "<polyline" in svg.read_text()


def test_evaluate_rejects_bad_step():
    assert main(["evaluate", "--lam", "0", "--t-stop", "1", "--step", "0"]) == 2


def test_evaluate_witness_times_on_state(state_file, capsys):
    stage = json.loads(state_file.read_text())["stages"][0]
    t = stage["times"][0]
    lam = stage["cover"][0]["lambda_lo"]
    args = ["evaluate", "--state", str(state_file), "--lam", str(lam)]
    assert main(args + ["--t-start", repr(t), "--t-stop", repr(t)]) == 0
    rows = _csv_rows(capsys.readouterr().out)
    assert float(rows[0]["abs"]) >= 0.3


def test_audit_reference_state(state_file, tmp_path, capsys):
    report = tmp_path / "report.json"
    args = ["audit", "--state", str(state_file), "--which", "witnesses", "--out", str(report)]
    assert main(args) == 0
    assert "[PASS] witnesses" in capsys.readouterr().out
    data = json.loads(report.read_text())
    assert [r["name"] for r in data] == ["witnesses"]
    assert data[0]["pass"] is True


def test_audit_all_runs_in_order(state_file, tmp_path, capsys):
    cfg = tmp_path / "run.env"
    cfg.write_text("SPECTRUM_BOXES=200,400\n", encoding="utf-8")
    assert main(["--config", str(cfg), "audit", "--state", str(state_file)]) == 0
    out = capsys.readouterr().out
    heads = [line for line in out.splitlines() if line.startswith("[")]
    names = [line.split("]")[1].split(":")[0].strip() for line in heads]
    assert names == ["witnesses", "freeze", "spectrum", "decoupling"]


def test_audit_failure_exits_one(state_file, tmp_path):
    data = json.loads(state_file.read_text())
    data["stages"][0]["barrier_site"] += 1
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(data), encoding="utf-8")
    assert main(["audit", "--state", str(broken), "--which", "decoupling"]) == 1


def test_audit_malformed_state_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1, "stages": []', encoding="utf-8")
    assert main(["audit", "--state", str(bad)]) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_chain(state_file, capsys):
    assert main(["chain", "--state", str(state_file), "--lam", "0.25"]) == 0
    rows = _csv_rows(capsys.readouterr().out)
    assert [r["j"] for r in rows] == ["1"]
    assert float(rows[0]["abs"]) >= 0.3


def test_inspect_state(state_file, capsys):
    assert inspect_main([str(state_file)]) == 0
    out = capsys.readouterr().out
    assert "stages=1" in out
    assert "barriers: 2:" in out
    assert inspect_main([str(state_file) + ".missing"]) == 2
