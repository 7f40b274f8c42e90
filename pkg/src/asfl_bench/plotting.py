"""Figures rendered from run directories and sweep summaries (PNG files only)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .metrics import client_matrix, read_metrics  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_run(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Write the per-run figures into ``run_dir/figures`` (or ``out_dir``)."""
    run_dir = Path(run_dir)
    cols = read_metrics(run_dir / "metrics.csv")
    out = Path(out_dir) if out_dir is not None else run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    r = cols["round"]
    written = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.stackplot(r, cols["t_stage1"], cols["t_stage2"], cols["t_stage3"],
                     labels=["stage 1 (migration)", "stage 2 (FP + upload)", "stage 3 (server + BP)"], alpha=0.8)
        ax.plot(r, np.cumsum(cols["t_total"]) / np.arange(1, len(r) + 1), "k--", lw=1, label="running mean")
        ax.set_xlabel("round")
        ax.set_ylabel("expected delay [s]")
        ax.legend(loc="upper right")
        written.append(_save(fig, out / "delay.png"))

        fig, ax = plt.subplots()
        e = client_matrix(cols, "e")
        ax.plot(r, e, lw=0.8, alpha=0.6)
        ax.plot(r, e.sum(axis=1) / max(e.shape[1], 1), "k", lw=1.5, label="client mean")
        ax.set_xlabel("round")
        ax.set_ylabel("expected client energy [J]")
        ax.legend(loc="upper right")
        written.append(_save(fig, out / "energy.png"))

        fig, ax = plt.subplots()
        ax.plot(r, cols["g_obj_consistent"], label="consistent")
        ax.plot(r, cols["g_obj_verbatim"], label="verbatim", alpha=0.7)
        ax.set_yscale("log")
        ax.set_xlabel("round")
        ax.set_ylabel("model discrepancy objective")
        ax.legend()
        written.append(_save(fig, out / "g_obj.png"))

        fig, ax = plt.subplots()
        q = client_matrix(cols, "Q")
        ax.plot(r, q[:, 0], "k", lw=1.5, label="delay queue")
        if q.shape[1] > 1:
            ax.plot(r, q[:, 1:].max(axis=1), lw=1, label="largest energy queue")
        ax.set_xlabel("round")
        ax.set_ylabel("virtual queue")
        ax.legend()
        written.append(_save(fig, out / "queues.png"))

        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
        ax1.step(r, cols["cut"], where="post")
        ax1.set_ylabel("cut layer")
        ax1.yaxis.set_major_locator(MaxNLocator(integer=True))
        part = np.array([[c == "1" for c in s] for s in cols["participation"]], dtype=float)
        ax2.imshow(part.T, aspect="auto", interpolation="nearest", cmap="Greys",
                   extent=(r[0] - 0.5, r[-1] + 0.5, part.shape[1] + 0.5, 0.5))
        ax2.set_xlabel("round")
        ax2.set_ylabel("client")
        ax2.grid(False)
        written.append(_save(fig, out / "split_participation.png"))

        fig, ax1 = plt.subplots()
        ax1.plot(r, cols["train_loss"], color="C0")
        ax1.set_xlabel("round")
        ax1.set_ylabel("train loss", color="C0")
        ax2 = ax1.twinx()
        ax2.plot(r, cols["train_acc"], color="C1")
        ax2.set_ylabel("train accuracy", color="C1")
        written.append(_save(fig, out / "training.png"))
    return written


def render_sweep(summary_csv: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Mean +- standard error of each summary metric against the swept value."""
    summary_csv = Path(summary_csv)
    with open(summary_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    out = Path(out_dir) if out_dir is not None else summary_csv.parent / "figures"
    out.mkdir(parents=True, exist_ok=True)
    param = rows[0]["param"]
    x = np.array([float(r["value"]) for r in rows])
    metrics = [c[:-5] for c in rows[0] if c.endswith("_mean")]
    written = []
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 3.0))
        for ax, m in zip(np.atleast_1d(axes), metrics):
            y = np.array([float(r[f"{m}_mean"]) for r in rows])
            se = np.array([float(r[f"{m}_se"]) for r in rows])
            ax.errorbar(x, y, yerr=se, marker="o", capsize=3)
            ax.set_xlabel(param)
            ax.set_title(m.replace("_", " "))
        written.append(_save(fig, out / f"sweep_{param}.png"))
    return written
