"""Per-round metrics rows and their CSV encoding.

Column order is fixed.  Per-client groups expand to one column per client
(``k_1 .. k_N``), queues to ``Q_0 .. Q_N`` with ``Q_0`` the delay queue.
Floats are written with ``repr`` so a CSV round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# template of the header; "{n}" groups expand per client, "{q}" per queue
HEADER_TEMPLATE = (
    "round", "cut", "k_{n}", "p_{n}", "s_{n}",
    "t_stage1", "t_stage2", "t_stage3", "t_total", "e_{n}",
    "g_obj_verbatim", "g_obj_consistent", "Q_{q}",
    "participation", "bcd_iters", "train_loss", "train_acc",
)


def metrics_header(n_clients: int) -> list[str]:
    cols: list[str] = []
    for name in HEADER_TEMPLATE:
        if "{n}" in name:
            cols += [name.format(n=i) for i in range(1, n_clients + 1)]
        elif "{q}" in name:
            cols += [name.format(q=i) for i in range(n_clients + 1)]
        else:
            cols.append(name)
    return cols


@dataclass
class MetricsRow:
    round: int
    cut: int
    k: np.ndarray
    p: np.ndarray
    s: np.ndarray
    t_stage1: float
    t_stage2: float
    t_stage3: float
    t_total: float
    e: np.ndarray
    g_obj_verbatim: float
    g_obj_consistent: float
    queues: np.ndarray
    bcd_iters: int
    train_loss: float
    train_acc: float

    @property
    def participation(self) -> str:
        return "".join("1" if v >= 1 else "0" for v in self.k)

    @classmethod
    def from_record(cls, rec) -> "MetricsRow":
        c, d = rec.costs, rec.decisions
        return cls(rec.round, d.cut, np.asarray(d.rb_counts), np.asarray(d.tx_powers), np.asarray(c.s),
                   c.t_stage1_s, c.t_stage2_s, c.t_stage3_expected_s, c.t_total_expected_s,
                   np.asarray(c.e_total_expected_j), rec.g_obj_verbatim, rec.g_obj_consistent,
                   np.asarray(rec.queues), rec.bcd_iters, rec.train_loss, rec.train_acc)

    def cells(self) -> list[str]:
        f = _fmt
        out = [str(int(self.round)), str(int(self.cut))]
        out += [str(int(v)) for v in self.k]
        out += [f(v) for v in self.p] + [f(v) for v in self.s]
        out += [f(self.t_stage1), f(self.t_stage2), f(self.t_stage3), f(self.t_total)]
        out += [f(v) for v in self.e]
        out += [f(self.g_obj_verbatim), f(self.g_obj_consistent)]
        out += [f(v) for v in self.queues]
        out += [self.participation, str(int(self.bcd_iters)), f(self.train_loss), f(self.train_acc)]
        return out

    def is_finite(self) -> bool:
        vals = np.concatenate([self.p, self.s, self.e, self.queues,
                               [self.t_stage1, self.t_stage2, self.t_stage3, self.t_total,
                                self.g_obj_verbatim, self.g_obj_consistent, self.train_loss, self.train_acc]])
        return bool(np.all(np.isfinite(vals)))


def _fmt(v) -> str:
    return repr(float(v))


class MetricsWriter:
    """Streams rows to ``metrics.csv``; flushes after every row."""

    def __init__(self, path: str | Path, n_clients: int):
        self.path = Path(path)
        self.n_clients = n_clients
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(metrics_header(n_clients))
        self._fh.flush()

    def write(self, row: MetricsRow) -> None:
        if len(row.k) != self.n_clients:
            raise ValueError(f"row has {len(row.k)} clients, writer expects {self.n_clients}")
        self._csv.writerow(row.cells())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a metrics CSV as arrays (participation stays a string array)."""
    with open(path, newline="") as fh:
        return parse_metrics(fh.read())


def parse_metrics(text: str) -> dict[str, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty metrics file")
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("k_"))
    if header != metrics_header(n):
        raise ValueError("metrics header does not match the schema")
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        if name == "participation":
            out[name] = np.array(col, dtype=str)
        elif name in ("round", "cut", "bcd_iters") or name.startswith("k_"):
            out[name] = np.array(col, dtype=np.int64)
        else:
            out[name] = np.array(col, dtype=float)
    return out


def client_matrix(cols: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    """(rounds, N) array from the per-client columns ``prefix_1 .. prefix_N``."""
    names = sorted((k for k in cols if k.startswith(prefix + "_") and k[len(prefix) + 1:].isdigit()),
                   key=lambda k: int(k[len(prefix) + 1:]))
    if not names:
        return np.zeros((0, 0))
    return np.stack([cols[k] for k in names], axis=1)
