"""Run directories, manifests, summaries, replay checks and parameter sweeps.

A run directory holds ``manifest.json`` (written before the first round),
``metrics.csv`` (one row per round) and ``stability.json``.  The manifest
alone is enough to reproduce the metrics byte for byte.
"""

from __future__ import annotations

import csv
import datetime as _dt
import filecmp
import json
import math
import os
import subprocess
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, learner
from .coordinator import BaselinePolicy, RoundRecord, Simulation
from .metrics import MetricsRow, MetricsWriter
from .scenario import ConfigError, ScenarioConfig, Seeds, config_from_dict, make_dataset

MANIFEST = "manifest.json"
METRICS = "metrics.csv"
STABILITY = "stability.json"
SUMMARY = "summary.json"

# sweep parameter names on the command line -> config fields
SWEEP_PARAMS = {
    "mu": "queue_memory",
    "V": "penalty_weight",
    "rho": "dirichlet_alpha",
    "n_clients": "n_clients",
    "K": "n_rbs",
}
SUMMARY_METRICS = ("final_accuracy", "total_delay_s", "total_energy_j", "avg_g_obj", "avg_violation")


def build_id() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config: dict
    policy: str
    rounds: int
    seeds: dict
    build: str
    started: str
    finished: str | None = None
    paths: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return cls(**raw)


def holdout_accuracy(model: learner.SplitModel, x: np.ndarray, y: np.ndarray) -> float:
    """Held-out accuracy of each client's full model, averaged over clients."""
    accs = []
    for layers in model.clients:
        out, _ = learner.forward(layers, x, last_is_output=True)
        accs.append(float(np.mean(out.argmax(axis=1) == y)))
    return float(np.mean(accs))


def violation_proxy(t_total: np.ndarray, energy: np.ndarray, cfg: ScenarioConfig) -> float:
    """Mean per round of relative positive constraint excess.

    Per round: max(T - gamma, 0)/gamma + mean_n max(E_n - delta, 0)/delta.
    """
    t = np.asarray(t_total, dtype=float)
    e = np.asarray(energy, dtype=float).reshape(len(t), -1)
    if not len(t):
        return 0.0
    d = np.maximum(t - cfg.delay_budget_s, 0.0) / cfg.delay_budget_s
    en = np.maximum(e - cfg.energy_budget_j, 0.0).mean(axis=1) / cfg.energy_budget_j
    return float(np.mean(d + en))


def summarize(records: list[RoundRecord], cfg: ScenarioConfig, final_accuracy: float | None = None) -> dict:
    t = np.array([r.costs.t_total_expected_s for r in records])
    e = np.array([r.costs.e_total_expected_j for r in records]).reshape(len(records), -1)
    g = np.array([r.g_obj_consistent if cfg.objective_mode == "consistent" else r.g_obj_verbatim for r in records])
    return {
        "rounds": len(records),
        "final_accuracy": final_accuracy,
        "total_delay_s": float(t.sum()),
        "total_energy_j": float(e.sum()),
        "cumulative_g_obj": float(g.sum()),
        "avg_g_obj": float(g.mean()) if len(g) else 0.0,
        "avg_violation": violation_proxy(t, e, cfg),
        "infeasible_rounds": int(sum(not r.feasible for r in records)),
        "reused_rounds": int(sum(r.reused_previous for r in records)),
        "descent_violations": int(sum(r.descent_violations for r in records)),
        "rounds_with_descent_violation": int(sum(r.descent_violations > 0 for r in records)),
        "mean_participation": float(np.mean([np.mean(r.decisions.rb_counts >= 1) for r in records])) if records else 0.0,
    }


@dataclass
class RunResult:
    out_dir: Path
    summary: dict
    stability: dict


def run_simulation(cfg: ScenarioConfig, policy: BaselinePolicy | str, out_dir: str | Path,
                   rounds: int | None = None, figures: bool = False, progress=None) -> RunResult:
    """Run one policy and write the run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rounds is not None:
        cfg = cfg.replace(n_rounds=int(rounds))
    sim = Simulation(cfg, policy)
    paths = {"manifest": MANIFEST, "metrics": METRICS, "stability": STABILITY, "summary": SUMMARY}
    if cfg.snapshot_every:
        (out / "snapshots").mkdir(exist_ok=True)
        sim.snapshot_dir = str(out / "snapshots")
        paths["snapshots"] = "snapshots"
    manifest = RunManifest(cfg.to_dict(), sim.policy.tag, cfg.n_rounds, dict(cfg.seeds.__dict__), build_id(), _now(),
                           paths=paths)
    manifest.write(out / MANIFEST)
    with MetricsWriter(out / METRICS, cfg.n_clients) as writer:
        def on_round(rec: RoundRecord):
            row = MetricsRow.from_record(rec)
            if not row.is_finite():
                raise FloatingPointError(f"round {rec.round} produced non-finite metrics")
            writer.write(row)
            if progress is not None:
                progress(rec)

        sim.run(cfg.n_rounds, on_round)
    x_test, y_test = make_dataset(cfg, cfg.test_samples, split=1)
    acc = holdout_accuracy(sim.model, x_test, y_test)
    stab = sim.stability().to_dict()
    (out / STABILITY).write_text(json.dumps(stab, indent=2, sort_keys=True) + "\n")
    summary = summarize(sim.records, cfg, acc)
    summary["policy"] = sim.policy.tag
    (out / SUMMARY).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest.finished = _now()
    if figures:
        from .plotting import render_run
        manifest.paths["figures"] = [str(p.relative_to(out)) for p in render_run(out)]
    manifest.write(out / MANIFEST)
    return RunResult(out, summary, stab)


def load_run_config(run_dir: str | Path) -> tuple[ScenarioConfig, str]:
    manifest = RunManifest.read(Path(run_dir) / MANIFEST)
    return config_from_dict(manifest.config), manifest.policy


@dataclass
class CheckResult:
    same: bool
    compared: list[str]
    differing: list[str]


def check_run(run_dir: str | Path) -> CheckResult:
    """Re-run from the manifest and compare metrics and stability bytes."""
    run_dir = Path(run_dir)
    if not (run_dir / MANIFEST).exists():
        raise FileNotFoundError(f"no {MANIFEST} in {run_dir}")
    cfg, policy = load_run_config(run_dir)
    with tempfile.TemporaryDirectory() as tmp:
        run_simulation(cfg, policy, tmp)
        files = [METRICS, STABILITY]
        diff = [f for f in files if not filecmp.cmp(run_dir / f, Path(tmp) / f, shallow=False)]
    return CheckResult(not diff, files, diff)


def pool_width() -> int:
    """Worker count from ASFL_BENCH_THREADS (default: one per CPU)."""
    raw = os.environ.get("ASFL_BENCH_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        width = int(raw)
    except ValueError as exc:
        raise ConfigError("ASFL_BENCH_THREADS", f"ASFL_BENCH_THREADS must be an integer, got {raw!r}") from exc
    return max(1, width)


def _cell(args) -> dict:
    cfg_dict, policy, out_dir = args
    res = run_simulation(config_from_dict(cfg_dict), policy, out_dir)
    return res.summary


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if not len(v):
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def sweep(base: ScenarioConfig, param: str, values, repeats: int, out_dir: str | Path,
          policy: str = "asfl", rounds: int | None = None, width: int | None = None) -> list[dict]:
    """Cross product of values x repeats; one run directory per cell.

    Repeat ``r`` uses seed ``base.seeds.env + r`` on every stream.
    Writes ``summary.csv`` with mean and standard error per value.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(param, f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
    values = list(values)
    if not values:
        raise ConfigError("values", "empty value list")
    if repeats < 1:
        raise ConfigError("repeats", "repeats must be >= 1")
    key = SWEEP_PARAMS[param]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs, cells = [], []
    for v in values:
        for r in range(repeats):
            seed = base.seeds.env + r
            changes = {key: v, "seeds": Seeds(seed, seed, seed, seed)}
            if rounds is not None:
                changes["n_rounds"] = int(rounds)
            cfg = base.replace(**changes)
            cell_dir = out / f"{param}={v}" / f"rep{r}"
            jobs.append((cfg.to_dict(), policy, str(cell_dir)))
            cells.append((v, r))
    width = pool_width() if width is None else width
    if width > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(width, len(jobs))) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    rows = []
    for v in values:
        group = [res for (cv, _), res in zip(cells, results) if cv == v]
        row = {"param": param, "value": v, "repeats": len(group)}
        for m in SUMMARY_METRICS:
            row[f"{m}_mean"], row[f"{m}_se"] = mean_stderr(g[m] for g in group)
        rows.append(row)
    write_summary_csv(out / "summary.csv", rows)
    return rows


def write_summary_csv(path: Path, rows: list[dict]) -> None:

    cols = ["param", "value", "repeats"] + [f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "se")]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
