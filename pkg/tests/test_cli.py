import json
import shutil
import subprocess

import pytest

from asfl_bench.cli import main

TINY = ["--set", "n_clients=2", "--set", "n_rbs=3", "--set", "layer_widths=[8,16,16,4]",
        "--set", "samples_per_client=40", "--set", "test_samples=100", "--rounds", "3"]


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_simulate_check_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", *TINY, "--seed", "5", "--out", str(out), "--figures"]) == 0
    assert "rounds=3" in capsys.readouterr().out
    assert (out / "figures" / "delay.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == {"env": 5, "data": 5, "model": 5, "sampling": 5}
    assert "figures/queues.png" in manifest["paths"]["figures"]

    assert main(["check", str(out)]) == 0
    assert "metrics.csv: identical" in capsys.readouterr().out

    shutil.rmtree(out / "figures")
    assert main(["report", str(out)]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 6 and all(p.endswith(".png") for p in printed)


def test_sweep_and_report(tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", *TINY, "--param", "mu", "--values", "0.1,0.9", "--repeats", "2", "--out", str(out)]) == 0
    assert "mu=0.1:" in capsys.readouterr().out
    assert main(["report", str(out)]) == 0
    assert (out / "figures" / "sweep_mu.png").exists()


def test_config_error_is_one_json_line(capsys):
    assert main(["simulate", "--set", "queue_memory=1.5", "--rounds", "1"]) == 2
    line = error_line(capsys)
    assert line["field"] == "queue_memory" and "out of [0,1]" in line["message"]


def test_bad_baseline(capsys):
    assert main(["simulate", *TINY, "--baseline", "greedy"]) == 2
    assert error_line(capsys)["field"] == "baseline"


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 2
    assert error_line(capsys)["error"] in ("config", "io")


def test_missing_run_dir(tmp_path, capsys):
    assert main(["check", str(tmp_path)]) == 2
    assert error_line(capsys)["error"] == "io"


def test_oracles_pass(capsys):
    assert main(["oracle", "per", "--points", "3", "--draws", "100000"]) == 0
    assert main(["oracle", "power", "--instances", "10"]) == 0
    assert main(["oracle", "rb", "--n", "2", "--k", "3", "--instances", "3"]) == 0
    assert main(["oracle", "split", "--instances", "3"]) == 0
    assert main(["oracle", "joint", "--instances", "1", "--power-points", "40"]) == 0
    capsys.readouterr()


def test_solve_round(capsys):
    assert main(["solve-round", *TINY, "--rb", "--round", "1"]) == 0
    assert main(["solve-round", *TINY, "--power", "--round", "1"]) == 0
    assert capsys.readouterr().out


def test_console_script_installed():
    exe = shutil.which("asfl-bench")
    if exe is None:
        pytest.skip("console script not on PATH")
    res = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("asfl-bench")
