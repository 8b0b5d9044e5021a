import json

import pytest

from rglab.cli import OPTIONS, config_hash, dispatch


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    code = dispatch([*argv, "--out", str(d)])
    return code, d


def load(d, name):
    return json.loads((d / name).read_text())


def test_critical_example(tmp_path):
    code, d = run(tmp_path, "critical", "--g0", "0.02", "--m2", "0", "--d", "4", "--L", "2", "--n", "1")
    assert code == 0
    res = load(d, "critical.json")["results"]
    assert set(res) >= {"mu0c_backward", "mu0c_bisect", "diff"}
    assert res["diff"] < 1e-8


def test_susy_check_exit_zero(tmp_path, capsys):
    code, d = run(tmp_path, "susy-check")
    assert code == 0
    assert "normalisation" in capsys.readouterr().out
    assert all(v < 1e-10 for v in load(d, "susy-check.json")["results"].values())


def test_flow_header(tmp_path):
    code, d = run(tmp_path, "flow", "--jmax", "5")
    assert code == 0
    lines = (d / "flow.csv").read_text().splitlines()
    assert lines[0] == "j,g,mu,u,beta,eta,xi,vartheta"
    assert len(lines) == 7


def test_precedence_flags_over_file_over_defaults(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"g0": 0.03, "jmax": 4, "seed": 7}))
    code, d = run(tmp_path, "flow", "--config", str(cfg), "--g", "0.04")
    assert code == 0
    doc = load(d, "flow.json")
    assert doc["config"]["g0"] == 0.04
    assert doc["config"]["jmax"] == 4
    assert doc["config"]["L"] == OPTIONS["flow"]["L"][1]
    assert doc["seed"] == 7
    assert doc["config_hash"] == config_hash(doc["config"])
    assert doc["version"] == "rglab 0.1.0"


def test_output_config_round_trips(tmp_path):
    code, d = run(tmp_path, "flow", "--jmax", "3", "--seed", "5")
    doc = load(d, "flow.json")
    cfg = tmp_path / "again.json"
    cfg.write_text(json.dumps(doc["config"]))
    code2, d2 = run(tmp_path, "flow", "--config", str(cfg), out="out2")
    assert code == code2 == 0
    assert (d / "flow.json").read_bytes() == (d2 / "flow.json").read_bytes()


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"g0": 0.03, "bogus": 1}))
    code, _ = run(tmp_path, "flow", "--config", str(cfg))
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_malformed_config_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "g0": 0.03,\n  "jmax": \n}')
    code, _ = run(tmp_path, "flow", "--config", str(cfg))
    assert code == 2
    assert "line 4" in capsys.readouterr().err


def test_wrong_type_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"jmax": 2.5}))
    assert run(tmp_path, "flow", "--config", str(cfg))[0] == 2
    assert "jmax" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["frobnicate"], ["flow", "--g0", "abc"], ["flow", "--m2", "-1"],
                                  ["nonpert", "--engine", "magic"], ["flow", "--seed", "-3"]])
def test_validation_errors(tmp_path, argv):
    assert run(tmp_path, *argv)[0] == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert dispatch(["flow", "--jmax", "2", "--out", str(blocker / "sub")]) == 2


def test_gate_failure_exit_three(tmp_path):
    code, d = run(tmp_path, "critical", "--tol", "1e-30")
    assert code == 3
    assert (d / "critical.json").exists()


def test_threads_env_and_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("RGLAB_THREADS", "3")
    _, d = run(tmp_path, "flow", "--jmax", "2")
    assert load(d, "flow.json")["config"]["threads"] == 3
    _, d = run(tmp_path, "flow", "--jmax", "2", "--threads", "2", out="o2")
    assert load(d, "flow.json")["config"]["threads"] == 2


@pytest.mark.parametrize("argv", [["walks", "--samples", "2000", "--saw-n", "6"],
                                  ["meanfield", "--n", "3"],
                                  ["hier", "--d", "1", "--N", "4", "--m2", "0.2", "--jmax", "10"]])
def test_repeat_runs_byte_identical(tmp_path, argv):
    c1, d1 = run(tmp_path, *argv, out="a")
    c2, d2 = run(tmp_path, *argv, out="b")
    assert c1 == c2 == 0
    names = sorted(p.name for p in d1.iterdir())
    assert names == sorted(p.name for p in d2.iterdir())
    for n in names:
        assert (d1 / n).read_bytes() == (d2 / n).read_bytes()


def test_seed_changes_monte_carlo(tmp_path):
    _, a = run(tmp_path, "walks", "--samples", "2000", "--seed", "1", out="a")
    _, b = run(tmp_path, "walks", "--samples", "2000", "--seed", "2", out="b")
    fa = load(a, "walks.json")["results"]["feynman_kac"]["mean"]
    fb = load(b, "walks.json")["results"]["feynman_kac"]["mean"]
    assert fa != fb
