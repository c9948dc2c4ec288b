import csv
import json
import subprocess
import sys

import pytest

from morap.cli import main

from helpers import DATA


@pytest.mark.parametrize("t, code", [("-2.5,0.7", 0), ("-1.8,0.9", 1), ("-1.0,0.1", 0), ("-0.5,0.9", 1)])
def test_example_verdicts(t, code, capsys):
    assert main(["verify", "--instance", "small_example.json", f"--thresholds={t}", "--oracle"]) == code
    out = json.loads(capsys.readouterr().out)
    assert out["feasible"] is (code == 0)
    assert out["oracle"]["agree"]


def test_pareto_csv(tmp_path, capsys):
    path = tmp_path / "trace.csv"
    assert main(["pareto", "--instance", str(DATA / "small_example.json"), "--thresholds=-1.8,0.9",
                 "--csv", str(path)]) == 1
    payload = json.loads(capsys.readouterr().out)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iter", "w_1", "w_2", "r_1", "r_2"]
    assert len(rows) == 1 + len(payload["iterations"]) + 2
    assert rows[-2][0] == "tUp" and rows[-1][0] == "tDown"


def test_synth_output(tmp_path, capsys):
    out = tmp_path / "res.json"
    assert main(["synth", "--instance", "small_example.json", "--thresholds=-1.6,0.4", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["feasible"] and payload["synthesis"]
    assert sum(d["p"] for d in payload["synthesis"]) == pytest.approx(1.0)


def test_centralised_flag(capsys):
    assert main(["verify", "--instance", "small_example.json", "--thresholds=-2.5,0.7", "--centralised"]) == 0


def test_missing_file():
    assert main(["verify", "--instance", "nope.json", "--thresholds", "1,1"]) == 2


def test_bad_arguments():
    assert main(["verify"]) == 2
    assert main(["verify", "--instance", "small_example.json", "--thresholds", "a,b"]) == 2
    assert main(["verify", "--instance", "small_example.json", "--thresholds", "1,2,3"]) == 2


def test_not_reward_finite_is_a_model_error(tmp_path):
    obj = {"agents": [{"states": 1, "initial": 0, "labels": {},
                       "actions": [{"state": 0, "name": "idle", "to": [{"s": 0, "p": 1.0}], "reward": -1}]}],
           "tasks": ["F a"]}
    path = tmp_path / "idle.json"
    path.write_text(json.dumps(obj))
    assert main(["verify", "--instance", str(path), "--thresholds=-1,0.5"]) == 3


def test_bad_probabilities_are_a_model_error(tmp_path):
    obj = json.loads((DATA / "small_example.json").read_text())
    obj["agents"][0]["actions"][0]["to"][0]["p"] = 0.5
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(obj))
    assert main(["verify", "--instance", str(path), "--thresholds=-1,0.5"]) == 3


def test_export_dfa(capsys):
    assert main(["export-dfa", "--formula", "!x U y"]) == 0
    obj = json.loads(capsys.readouterr().out)
    assert obj["initial"] is not None
    assert main(["export-dfa", "--formula", "G a"]) == 2


def test_gen_warehouse_round_trip(tmp_path, capsys):
    path = tmp_path / "wh.json"
    assert main(["gen-warehouse", "--W", "3", "--H", "3", "--n", "1", "--out", str(path)]) == 0
    obj = json.loads(path.read_text())
    assert obj["agents"][0]["states"] == 72
    assert main(["verify", "--instance", str(path), "--thresholds=-1000,0"]) == 0


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "morap.cli", "verify", "--instance", "small_example.json",
                           "--thresholds=-2.5,0.7"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["feasible"]
