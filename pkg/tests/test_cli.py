import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from inls import cli
from inls.grid import RadialField
from inls.model import ModelParams

BASE = ["--N", "3", "--b", "1"]


def run(capsys, argv):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_ground_state_outputs(tmp_path, capsys, golden):
    code, out, _ = run(capsys, ["ground-state", *BASE, "--p", "2.5", "--omega", "1", "--out", str(tmp_path)])
    assert code == 0
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert max(diag["pohozaev"]) <= 1e-6
    assert diag["shooting_value"] == pytest.approx(golden["3,1,2.5"]["Q0"], rel=1e-10)
    field = RadialField.from_csv(tmp_path / "profile.csv", 3)
    assert field.grid.M == cli.GS_M
    assert json.loads(out)["kind"] == "ground-state"


def test_exit_code_for_invalid_regime(capsys):
    code, _, err = run(capsys, ["stability", *BASE, "--p", "4", "--omega", "1"])
    assert code == cli.EXIT_INVALID
    e = json.loads(err)
    assert e["exit_code"] == 2 and "mass-subcritical" in e["message"]


@pytest.mark.parametrize("argv", [
    ["ground-state", *BASE, "--p", "2.5", "--omega", "-1"],
    ["ground-state", *BASE, "--p", "20", "--omega", "1"],
    ["ground-state", "--N", "3", "--p", "2.5", "--omega", "1"],
    ["mass-critical", *BASE, "--p", "2.5"],
    ["evolve", *BASE, "--p", "2.5"],
])
def test_validation_errors_are_json(capsys, argv):
    code, out, err = run(capsys, argv)
    assert code == cli.EXIT_INVALID
    assert out == ""
    assert set(json.loads(err)) >= {"type", "message", "exit_code"}


def test_solver_failure_exit_code(capsys, monkeypatch):
    from inls import groundstate as G

    monkeypatch.setattr(G, "S_MAX", 1e-2)
    monkeypatch.setattr(G, "S_MIN", 5e-3)
    code, _, err = run(capsys, ["ground-state", *BASE, "--p", "2.5", "--omega", "1", "--M", "512"])
    assert code == cli.EXIT_SOLVER
    assert json.loads(err)["type"] == "BracketingError"


def test_expectation_mismatch(tmp_path, capsys):
    argv = ["evolve", *BASE, "--p", "2.5", "--omega", "1", "--M", "512", "--T", "0.2", "--sample-dt", "0.1",
            "--amplitude", "0.1", "--expect", "blowup", "--out", str(tmp_path)]
    code, _, err = run(capsys, argv)
    assert code == cli.EXIT_EXPECTATION
    assert json.loads(err)["type"] == "ExpectationMismatch"
    assert (tmp_path / "trajectory.csv").exists()
    argv[argv.index("blowup")] = "global"
    assert run(capsys, argv)[0] == 0


def test_classify_instability_datum(tmp_path, capsys, dyn_gs):
    from inls.dynamics import instability_family

    Q = dyn_gs(3, 1, 4)
    path = tmp_path / "field.csv"
    instability_family(Q, 0.2, grid=Q.grid).to_csv(path)
    code, out, _ = run(capsys, ["classify", *BASE, "--p", "4", "--omega", "1", "--input", str(path),
                                "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "classification.json").read_text())
    assert rep["tag"] == "KMinus"
    assert rep["d_value"] == pytest.approx(Q.action_value, rel=1e-12)


def test_evolve_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        argv = ["evolve", *BASE, "--p", "2.5", "--omega", "1", "--M", "512", "--T", "0.2",
                "--sample-dt", "0.05", "--out", str(d), "--seed", "7"]
        assert run(capsys, argv)[0] == 0
        outs.append((d / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]


def test_seeded_stability_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"s{k}"
        argv = ["stability", *BASE, "--p", "2.5", "--omega", "1", "--M", "512", "--T", "0.2",
                "--sample-dt", "0.1", "--seeds", "3", "--out", str(d)]
        assert run(capsys, argv)[0] == 0
        outs.append(sorted((p.name, p.read_bytes()) for p in d.iterdir()))
    assert outs[0] == outs[1]


def test_config_document_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"name": "cfg", "N": 3, "b": 1, "p": 2.5, "omega": 2.0, "M": 512,
                               "settings": {"T": 0.1, "sample_dt": 0.05, "amplitude": 0.2}}))
    code, out, _ = run(capsys, ["evolve", "--config", str(cfg), "--omega", "1.5"])
    assert code == 0
    res = json.loads(out)
    assert res["name"] == "cfg"
    assert res["result"]["params"]["omega"] == 1.5
    assert res["result"]["final_time"] == pytest.approx(0.1)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"N": 3, "b": 1, "p": 2.5, "omega": 1, "settings": {"nonsense": 1}}))
    assert run(capsys, ["evolve", "--config", str(bad)])[0] == cli.EXIT_INVALID


def test_d_omega_sweep(tmp_path, capsys):
    code, _, _ = run(capsys, ["d-omega-sweep", *BASE, "--p", "2.5", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "d_omega.csv").open()))
    assert [float(r["omega"]) for r in rows] == [0.25, 0.5, 1.0, 2.0, 4.0]
    for r in rows:
        assert abs(float(r["d_numeric"]) - float(r["d_closed_form"])) <= 1e-6 * float(r["d_closed_form"])


def test_seventeen_digit_round_trip(tmp_path, capsys):
    code, _, _ = run(capsys, ["evolve", *BASE, "--p", "2.5", "--omega", "1", "--M", "256", "--T", "0.1",
                              "--sample-dt", "0.05", "--out", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "trajectory.csv").read_text()
    for line in text.splitlines()[1:]:
        for tok in line.split(","):
            x = float(tok)
            if tok == "nan":  # dist_to_Q without a reference profile
                continue
            assert float(f"{x:.17g}") == x and f"{x:.17g}" == tok
    rep = json.loads((tmp_path / "report.json").read_text())
    assert isinstance(rep["mass_drift"], float)
    assert cli._fmt(np.float64(0.1)) == 0.1
    assert cli._fmt(np.bool_(True)) is True
    assert cli._fmt(float("nan")) is None


def test_exact_parameter_parsing():
    from fractions import Fraction

    assert cli._number("2.5") == Fraction(5, 2)
    assert cli._number("3") == 3
    with pytest.raises(Exception):
        cli._number("abc")


def test_empty_sweep():
    reports, text, worst = cli.sweep([])
    assert reports == [] and worst == 0
    assert text == "name,kind,exit_code,error\n"


def test_sweep_orders_rows_and_reports_worst(tmp_path, monkeypatch):
    def sc(name, kind, p, omega, **settings):
        return cli.Scenario(name, kind, ModelParams(3, 1, p, omega), M=256, settings=settings)

    scen = [
        sc("b-evolve", "evolve", 2.5, 1.0, T=0.1, sample_dt=0.05),
        sc("a-bad", "stability", 4, 1.0),
        sc("c-mismatch", "evolve", 2.5, 1.0, T=0.1, sample_dt=0.05, amplitude=0.1, expect="blowup"),
    ]
    monkeypatch.setenv("INLS_THREADS", "2")
    reports, text, worst = cli.sweep(scen, out=str(tmp_path))
    assert [r.name for r in reports] == ["a-bad", "b-evolve", "c-mismatch"]
    assert worst == cli.EXIT_EXPECTATION
    assert (tmp_path / "summary.csv").read_text() == text
    assert text.splitlines()[1:] == ["a-bad,stability,2,ParameterError", "b-evolve,evolve,0,",
                                     "c-mismatch,evolve,4,ExpectationMismatch"]


def test_max_workers_env(monkeypatch):
    monkeypatch.setenv("INLS_THREADS", "3")
    assert cli.max_workers() == 3
    monkeypatch.setenv("INLS_THREADS", "x")
    assert cli.max_workers() == 1


@pytest.mark.skipif(shutil.which("inls") is None, reason="console script not installed")
def test_console_script_help():
    res = subprocess.run(["inls", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for kind in cli.KINDS:
        assert kind in res.stdout
