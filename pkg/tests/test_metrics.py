import json

import numpy as np
import pytest

from asfl_bench.metrics import MetricsRow, MetricsWriter, client_matrix, metrics_header, parse_metrics, read_metrics
from asfl_bench.runner import (
    MANIFEST, METRICS, STABILITY, SUMMARY, RunManifest, check_run, mean_stderr, pool_width, run_simulation, sweep,
    violation_proxy,
)
from asfl_bench.scenario import ConfigError, ScenarioConfig

GOLDEN_N2 = ("round,cut,k_1,k_2,p_1,p_2,s_1,s_2,t_stage1,t_stage2,t_stage3,t_total,e_1,e_2,"
             "g_obj_verbatim,g_obj_consistent,Q_0,Q_1,Q_2,participation,bcd_iters,train_loss,train_acc")

TINY = ScenarioConfig(n_clients=2, n_rbs=3, layer_widths=(8, 16, 16, 4), n_rounds=4, samples_per_client=40,
                      test_samples=100)


def test_golden_header_two_clients():
    assert ",".join(metrics_header(2)) == GOLDEN_N2


def test_header_ten_clients():
    h = metrics_header(10)
    assert len(h) == 2 + 3 * 10 + 4 + 10 + 2 + 11 + 4
    assert h[:3] == ["round", "cut", "k_1"]
    assert h[h.index("Q_0"):h.index("participation")] == [f"Q_{i}" for i in range(11)]


def _row(n=2, **over):
    vals = dict(round=0, cut=1, k=np.array([1, 0][:n]), p=np.array([0.1, 0.2][:n]), s=np.array([0.01, 1.0][:n]),
                t_stage1=0.0, t_stage2=1.0, t_stage3=0.5, t_total=1.5, e=np.array([0.2, 0.0][:n]),
                g_obj_verbatim=1.0, g_obj_consistent=0.5, queues=np.zeros(n + 1), bcd_iters=2,
                train_loss=1.2, train_acc=0.25)
    vals.update(over)
    return MetricsRow(**vals)


def test_row_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    row = _row(p=np.array([0.1 + 1e-17, 1 / 3]))
    with MetricsWriter(path, 2) as w:
        w.write(row)
    cols = read_metrics(path)
    assert cols["p_2"][0] == 1 / 3
    assert cols["participation"][0] == "10"
    assert client_matrix(cols, "k").tolist() == [[1, 0]]


def test_writer_rejects_wrong_width(tmp_path):
    with MetricsWriter(tmp_path / "m.csv", 3) as w:
        with pytest.raises(ValueError):
            w.write(_row())


def test_nonfinite_detection():
    assert _row().is_finite()
    assert not _row(t_total=float("nan")).is_finite()


def test_parse_rejects_bad_header():
    with pytest.raises(ValueError):
        parse_metrics("round,cut\n0,1\n")
    with pytest.raises(ValueError):
        parse_metrics("")


def test_violation_proxy():
    cfg = ScenarioConfig(n_clients=2, delay_budget_s=10.0, energy_budget_j=1.0)
    v = violation_proxy(np.array([12.0, 5.0]), np.array([[1.5, 0.5], [0.0, 0.0]]), cfg)
    assert v == pytest.approx(((0.2 + 0.25) + 0.0) / 2)


def test_mean_stderr():
    assert mean_stderr([1.0, 3.0]) == pytest.approx((2.0, 1.0))
    assert mean_stderr([4.0]) == (4.0, 0.0)


def test_pool_width_env(monkeypatch):
    monkeypatch.setenv("ASFL_BENCH_THREADS", "3")
    assert pool_width() == 3
    monkeypatch.setenv("ASFL_BENCH_THREADS", "x")
    with pytest.raises(ConfigError):
        pool_width()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run_simulation(TINY, "asfl", out)
    return out


def test_run_directory_contents(run_dir):
    for name in (MANIFEST, METRICS, STABILITY, SUMMARY):
        assert (run_dir / name).exists()
    man = RunManifest.read(run_dir / MANIFEST)
    assert man.policy == "asfl" and man.rounds == 4 and man.finished
    cols = read_metrics(run_dir / METRICS)
    assert cols["round"].tolist() == [0, 1, 2, 3]
    assert json.loads((run_dir / STABILITY).read_text())["queue_bounds_hold"] is True


def test_replay_is_byte_identical(run_dir, tmp_path):
    res = check_run(run_dir)
    assert res.same and res.differing == []
    run_simulation(TINY, "asfl", tmp_path)
    assert (tmp_path / METRICS).read_bytes() == (run_dir / METRICS).read_bytes()


def test_replay_detects_tampering(run_dir, tmp_path):
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(run_dir, copy)
    text = (copy / METRICS).read_text().splitlines()
    text[1] = text[1].replace(",", ",9", 1)
    (copy / METRICS).write_text("\n".join(text) + "\n")
    assert check_run(copy).differing == [METRICS]


def test_check_needs_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        check_run(tmp_path)


def test_sweep_layout(tmp_path):
    rows = sweep(TINY.replace(n_rounds=2), "mu", [0.2, 0.8], 2, tmp_path, width=1)
    assert [r["value"] for r in rows] == [0.2, 0.8]
    assert (tmp_path / "mu=0.2" / "rep1" / METRICS).exists()
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert header.startswith("param,value,repeats,final_accuracy_mean")
    with pytest.raises(ConfigError):
        sweep(TINY, "bogus", [1], 1, tmp_path)
    with pytest.raises(ConfigError):
        sweep(TINY, "mu", [], 1, tmp_path)
