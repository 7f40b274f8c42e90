"""Toy dense split network trained with split federated SGD.

Every client owns a full copy of the M layers.  Layers ``0..cut-1`` (0-based)
are its client-side model; layers ``cut..M-1`` are its copy of the
server-side model, which the server keeps per client between the SGD step
and aggregation.  After aggregation every server-side copy equals the
sample-weighted mean over the round's participants.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .scenario import ScenarioConfig, rng

Layer = tuple[np.ndarray, np.ndarray]  # (W of shape (fan_in, fan_out), b of shape (fan_out,))

SNAPSHOT_MAGIC = b"ASFLSNP1"


def init_layers(widths, scale: float, g: np.random.Generator) -> list[Layer]:
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = g.normal(0.0, scale / math.sqrt(fan_in), (fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return layers


def _copy(layers: list[Layer]) -> list[Layer]:
    return [(w.copy(), b.copy()) for w, b in layers]


def flatten(layers: list[Layer]) -> np.ndarray:
    if not layers:
        return np.zeros(0)
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def n_params(widths, lo: int, hi: int) -> int:
    return int(sum(widths[m] * widths[m + 1] + widths[m + 1] for m in range(lo, hi)))


# forward / backward pieces --------------------------------------------------

def forward(layers: list[Layer], x: np.ndarray, last_is_output: bool):
    """Run ``layers`` on ``x``; hidden layers use tanh.

    Returns the output and the list of layer inputs needed for backward.
    When ``last_is_output`` the final layer is linear (logits).
    """
    inputs = []
    h = x
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        h = h @ w + b
        if not (last_is_output and i == len(layers) - 1):
            h = np.tanh(h)
    return h, inputs


def backward(layers: list[Layer], inputs, out: np.ndarray, grad_out: np.ndarray, last_is_output: bool):
    """Gradients of the layers and of their input, given dL/d(output)."""
    grads: list[Layer] = [None] * len(layers)  # type: ignore[list-item]
    g = grad_out
    h = out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if not (last_is_output and i == len(layers) - 1):
            g = g * (1.0 - h * h)
        grads[i] = (inputs[i].T @ g, g.sum(axis=0))
        h = inputs[i]
        g = g @ w.T
    return grads, g


def softmax_xent(logits: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n, logp


def mse_loss(out: np.ndarray, target: np.ndarray):
    diff = out - target
    n = out.shape[0]
    return 0.5 * float((diff * diff).sum()) / n, diff / n


def split_step(layers: list[Layer], cut: int, x, y, loss: str = "xent"):
    """One split forward/backward pass.

    The client runs layers ``[:cut]`` and sends the intermediate output; the
    server finishes the forward pass, back-propagates and returns the
    gradient of the intermediate output; the client completes BP.
    Returns (loss, gradients for all layers, correct count).
    """
    client, server = layers[:cut], layers[cut:]
    z, c_in = forward(client, x, last_is_output=not server)
    if server:
        out, s_in = forward(server, z, last_is_output=True)
    else:
        out, s_in = z, []
    if loss == "xent":
        value, g_out, logp = softmax_xent(out, y)
        correct = int((logp.argmax(axis=1) == y).sum())
    else:
        value, g_out = mse_loss(out, y)
        correct = 0
    if server:
        s_grads, g_z = backward(server, s_in, out, g_out, last_is_output=True)
    else:
        s_grads, g_z = [], g_out
    c_grads, _ = backward(client, c_in, z, g_z, last_is_output=not server)
    return value, c_grads + s_grads, correct


def full_loss(layers: list[Layer], x, y, loss: str = "xent") -> float:
    out, _ = forward(layers, x, last_is_output=True)
    if loss == "xent":
        return float(softmax_xent(out, y)[0])
    return mse_loss(out, y)[0]


# the split model ------------------------------------------------------------

@dataclass
class RoundOutcome:
    beta: np.ndarray
    losses: np.ndarray  # nan for non-participants
    correct: np.ndarray
    seen: np.ndarray
    checksums: list[str]
    aggregated: bool


@dataclass
class SplitModel:
    widths: tuple[int, ...]
    cut: int
    clients: list[list[Layer]]
    n_samples: np.ndarray
    loss: str = "xent"
    history: list[int] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: ScenarioConfig, cut: int | None = None) -> "SplitModel":
        g = rng(cfg.seeds.model, "model", 0)
        base = init_layers(cfg.layer_widths, cfg.init_scale, g)
        clients = [_copy(base) for _ in range(cfg.n_clients)]
        return cls(tuple(cfg.layer_widths), cut or cfg.initial_cut, clients,
                   np.full(cfg.n_clients, cfg.samples_per_client, dtype=float))

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def copy(self) -> "SplitModel":
        return SplitModel(self.widths, self.cut, [_copy(c) for c in self.clients],
                          self.n_samples.copy(), self.loss, list(self.history))

    def client_side(self, n: int, cut: int | None = None) -> list[Layer]:
        return self.clients[n][: self.cut if cut is None else cut]

    def server_side(self, n: int, cut: int | None = None) -> list[Layer]:
        return self.clients[n][self.cut if cut is None else cut:]

    def server_mean(self, cut: int | None = None, members=None) -> list[Layer]:
        """Sample-weighted mean of the server-side copies (over ``members``)."""
        cut = self.cut if cut is None else cut
        idx = np.arange(self.n_clients) if members is None else np.asarray(members)
        wts = self.n_samples[idx] / self.n_samples[idx].sum()
        out = []
        for m in range(cut, self.n_layers):
            w = sum(wt * self.clients[i][m][0] for wt, i in zip(wts, idx))
            b = sum(wt * self.clients[i][m][1] for wt, i in zip(wts, idx))
            out.append((w, b))
        return out

    def equal(self, other: "SplitModel") -> bool:
        if self.cut != other.cut or len(self.clients) != len(other.clients):
            return False
        return all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
                   for ca, cb in zip(self.clients, other.clients) for a, b in zip(ca, cb))


def migrate_cut(model: SplitModel, to: int) -> SplitModel:
    """Move the cut; weight values are untouched, only their side changes.

    Growing moves server layers (equal copies of the aggregate) to every
    client; shrinking hands each client's layers to its server-side copy.
    """
    if not 1 <= to <= model.n_layers:
        raise ValueError(f"cut {to} outside 1..{model.n_layers}")
    out = model.copy()
    out.cut = to
    return out


def train_round(model: SplitModel, beta: np.ndarray, batches, lr: float) -> tuple[SplitModel, RoundOutcome]:
    """One round: participants (beta = 1) take an SGD step on both sides,
    then the server averages the participants' server-side copies and
    redistributes the average to every client.

    ``batches[n]`` is an ``(x, y)`` pair; entries of non-participants are
    ignored.
    """
    out = model.copy()
    beta = np.asarray(beta, dtype=int)
    n = model.n_clients
    losses = np.full(n, np.nan)
    correct = np.zeros(n, dtype=int)
    seen = np.zeros(n, dtype=int)
    checks = [""] * n
    part = np.flatnonzero(beta == 1)
    for i in part:
        x, y = batches[i]
        layers = out.clients[i]
        value, grads, corr = split_step(layers, out.cut, x, y, out.loss)
        out.clients[i] = [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(layers, grads)]
        losses[i] = value
        correct[i] = corr
        seen[i] = len(x)
        z, _ = forward(layers[: out.cut], x, last_is_output=False)
        checks[i] = f"{float(np.sum(z)):.6e}"
    aggregated = part.size > 0
    if aggregated and out.cut < out.n_layers:
        avg = out.server_mean(members=part)
        for i in range(n):
            out.clients[i] = out.clients[i][: out.cut] + [(w.copy(), b.copy()) for w, b in avg]
    return out, RoundOutcome(beta, losses, correct, seen, checks, aggregated)


def draw_beta(cfg: ScenarioConfig, round_idx: int, k, succ) -> np.ndarray:
    """Bernoulli participation: one uniform per client, drawn for all clients."""
    from .scenario import TAG_BETA

    u = rng(cfg.seeds.env, "env", TAG_BETA, round_idx).random(cfg.n_clients)
    return ((np.asarray(k) >= 1) & (u < np.asarray(succ))).astype(int)


def draw_batches(cfg: ScenarioConfig, round_idx: int, x, y, parts: list[np.ndarray]):
    out = []
    for n, idx in enumerate(parts):
        g = rng(cfg.seeds.data, "data", 3, round_idx, n)
        pick = idx[g.choice(len(idx), size=min(cfg.batch_size, len(idx)), replace=False)]
        out.append((x[pick], y[pick]))
    return out


# discrepancy probes -----------------------------------------------------------

def probe_indices(cfg: ScenarioConfig, n_client_params: int, round_idx: int, cut: int, iota: float | None = None):
    iota = cfg.sampling_ratio if iota is None else iota
    size = math.ceil(iota * n_client_params)
    g = rng(cfg.seeds.sampling, "sampling", round_idx, cut)
    return np.sort(g.choice(n_client_params, size=size, replace=False))


def sample_discrepancy_probe(model: SplitModel, iota: float, indices: np.ndarray | None = None,
                             g: np.random.Generator | None = None, cut: int | None = None):
    """Sampled client-side vectors (rows) and their arithmetic mean.

    The same index subset of size ceil(iota * P_c) is used for every client.
    """
    if not 0.0 < iota <= 1.0:
        raise ValueError("iota must lie in (0, 1]")
    cut = model.cut if cut is None else cut
    vecs = np.stack([flatten(model.client_side(n, cut)) for n in range(model.n_clients)])
    if indices is None:
        size = math.ceil(iota * vecs.shape[1])
        g = g or np.random.default_rng(0)
        indices = np.sort(g.choice(vecs.shape[1], size=size, replace=False))
    probes = vecs[:, indices]
    return probes, probes.mean(axis=0)


# snapshots --------------------------------------------------------------------

def write_snapshot(path, model: SplitModel, round_idx: int) -> None:
    """Binary dump: magic, uint32 header, then float32 little-endian weights.

    Header (little-endian uint32): round, n_clients, n_layers, cut, widths[0..M].
    Body: for each client, for each layer, W (row-major) then b.
    """
    head = struct.pack("<4I", round_idx, model.n_clients, model.n_layers, model.cut)
    head += struct.pack(f"<{len(model.widths)}I", *model.widths)
    body = b"".join(flatten(c).astype("<f4").tobytes() for c in model.clients)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC + head + body)


def read_snapshot(path):
    data = open(path, "rb").read()
    if data[:8] != SNAPSHOT_MAGIC:
        raise ValueError("not a weight snapshot")
    round_idx, n, m, cut = struct.unpack_from("<4I", data, 8)
    widths = struct.unpack_from(f"<{m + 1}I", data, 24)
    start = 24 + 4 * (m + 1)
    flat = np.frombuffer(data[start:], dtype="<f4").reshape(n, -1)
    return {"round": round_idx, "cut": cut, "widths": widths, "weights": flat}
