"""Per-round delay (three stages) and per-client energy accounting.

Cuts are 1-based: cut ``l`` keeps layers ``1..l`` on the client.  A client
with zero resource blocks is excluded from the round: it contributes no
delay or energy to stages 2 and 3 and counts as a lost packet (s = 1).
Stage-1 growth is a server broadcast and reaches every client; a shrinking
cut needs every client to upload its layers, so every client needs an RB.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import radio
from .scenario import ChannelDraw, ClientProfile, ScenarioConfig


class InfeasibleDecision(ValueError):
    """A decision that cannot be executed (e.g. uplink migration without RBs)."""


@dataclass(frozen=True)
class LayerProfile:
    """Per-layer sizes and workloads, all arrays of length M.

    size_bits: parameter size of layer m (psi_m)
    output_bits: activation size per sample at layer m (q_m)
    flops_fp, flops_bp: per-sample forward / backward workload
    """

    size_bits: np.ndarray
    output_bits: np.ndarray
    flops_fp: np.ndarray
    flops_bp: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in
                  (self.size_bits, self.output_bits, self.flops_fp, self.flops_bp)]
        m = len(arrays[0])
        if any(a.shape != (m,) for a in arrays):
            raise ValueError("layer profile arrays must share length M")
        if any(np.any(a < 0) for a in arrays):
            raise ValueError("layer profile entries must be non-negative")
        for name, a in zip(("size_bits", "output_bits", "flops_fp", "flops_bp"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_layers(self) -> int:
        return len(self.size_bits)

    @classmethod
    def from_widths(cls, widths, flops_scale: float = 1.0, bits_scale: float = 1.0) -> "LayerProfile":
        """Profile of a dense network: 32-bit floats, 2 FLOPs per MAC, BP = 2x FP."""
        w = np.asarray(widths, dtype=float)
        fan_in, fan_out = w[:-1], w[1:]
        params = fan_in * fan_out + fan_out
        fp = 2.0 * fan_in * fan_out * flops_scale
        return cls(32.0 * params * bits_scale, 32.0 * fan_out * bits_scale, fp, 2.0 * fp)

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "LayerProfile":
        if cfg.layer_profile is not None:
            lp = cfg.layer_profile
            return cls(lp["size_bits"], lp["output_bits"], lp["flops_fp"], lp["flops_bp"])
        return cls.from_widths(cfg.layer_widths, cfg.flops_scale, cfg.bits_scale)

    def client_fp(self, cut: int) -> float:
        return float(self.flops_fp[:cut].sum())

    def client_bp(self, cut: int) -> float:
        return float(self.flops_bp[:cut].sum())

    def server_fp(self, cut: int) -> float:
        return float(self.flops_fp[cut:].sum())

    def server_bp(self, cut: int) -> float:
        return float(self.flops_bp[cut:].sum())

    def cut_output_bits(self, cut: int) -> float:
        """q at the cut layer; needs cut < M."""
        if cut >= self.n_layers:
            raise ValueError("no intermediate output after the last layer")
        return float(self.output_bits[cut - 1])

    def cut_gradient_bits(self, cut: int) -> float:
        """psi of the first server-side layer (the gradient message size)."""
        if cut >= self.n_layers:
            raise ValueError("no server-side layer after the last layer")
        return float(self.size_bits[cut])

    def migration_bits(self, prev_cut: int, cut: int) -> float:
        lo, hi = sorted((prev_cut, cut))
        return float(self.size_bits[lo:hi].sum())


def lambda_vector(cut: int, n_layers: int) -> np.ndarray:
    """Binary layer-placement vector: 1 for client-side layers."""
    lam = np.zeros(n_layers, dtype=int)
    lam[:cut] = 1
    return lam


@dataclass(frozen=True)
class SplitDecision:
    cut: int
    allowed_cuts: tuple[int, ...]

    def __post_init__(self):
        if self.cut < 1:
            raise ValueError("cut must be >= 1")
        if self.cut not in self.allowed_cuts:
            raise ValueError(f"cut {self.cut} not in allowed cuts {self.allowed_cuts}")


@dataclass(frozen=True)
class RoundDecisions:
    cut: int
    prev_cut: int
    rb_counts: np.ndarray
    tx_powers: np.ndarray

    def validate(self, cfg: ScenarioConfig) -> None:
        k = np.asarray(self.rb_counts)
        p = np.asarray(self.tx_powers)
        if np.any(k < 0) or k.sum() > cfg.n_rbs:
            raise InfeasibleDecision(f"rb counts {k.tolist()} violate sum <= {cfg.n_rbs}")
        if np.any(p < 0) or np.any(p > cfg.max_tx_power_w * (1 + 1e-12)):
            raise InfeasibleDecision("transmit power outside [0, P_max]")
        if self.cut not in cfg.cuts():
            raise InfeasibleDecision(f"cut {self.cut} not allowed")


@dataclass
class RoundContext:
    """Everything about one round that is fixed while decisions vary."""

    cfg: ScenarioConfig
    profile: LayerProfile
    gain_sq: np.ndarray
    path_loss: np.ndarray
    cpu_hz: np.ndarray
    n_samples: np.ndarray
    prev_cut: int
    fading: str = ""
    dn_rate: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gain_sq = np.asarray(self.gain_sq, dtype=float)
        self.path_loss = np.asarray(self.path_loss, dtype=float)
        self.cpu_hz = np.asarray(self.cpu_hz, dtype=float)
        self.n_samples = np.asarray(self.n_samples, dtype=float)
        self.fading = self.fading or self.cfg.fading
        self.dn_rate = radio.downlink_rates(self.gain_sq, self.cfg)

    @classmethod
    def from_environment(cls, cfg, profile, draws: list[ChannelDraw], clients: list[ClientProfile],
                         prev_cut: int) -> "RoundContext":
        return cls(cfg, profile,
                   np.array([d.gain_sq for d in draws]),
                   np.array([d.path_loss_linear for d in draws]),
                   np.array([c.cpu_hz for c in clients]),
                   np.array([c.n_samples for c in clients], dtype=float),
                   prev_cut)

    @property
    def n_clients(self) -> int:
        return len(self.gain_sq)

    def compute_energy_per_flop(self) -> np.ndarray:
        """phi * kappa_c * f^2 (J per FLOP) for every client."""
        return self.cfg.energy_coeff * self.cfg.client_cycles_per_flop * self.cpu_hz ** 2

    def success(self, k, p) -> np.ndarray:
        """1 - s per client; 0 for clients without RBs."""
        k = np.asarray(k)
        p = np.broadcast_to(np.asarray(p, dtype=float), k.shape)
        out = np.zeros(k.shape)
        on = k >= 1
        if np.any(on):
            out[on] = radio.success_probability(k[on], p[on], np.broadcast_to(self.gain_sq, k.shape)[on],
                                                np.broadcast_to(self.path_loss, k.shape)[on],
                                                self.cfg, self.fading)
        return out


@dataclass
class RoundCosts:
    t_stage1_s: float
    t_stage2_s: float
    t_stage3_expected_s: float
    t_total_expected_s: float
    e_ms_j: np.ndarray
    e_fp_j: np.ndarray
    e_up_j: np.ndarray
    e_cbp_expected_j: np.ndarray
    e_total_expected_j: np.ndarray
    s: np.ndarray
    t1_client: np.ndarray
    t2_client: np.ndarray
    t3_client: np.ndarray


def _check_migration(ctx: RoundContext, cut: int, k) -> None:
    if cut < ctx.prev_cut and np.any(np.asarray(k) < 1):
        raise InfeasibleDecision("shrinking the cut needs every client to hold an RB for the upload")


def _rates(ctx: RoundContext, k, p):
    k = np.asarray(k)
    on = k >= 1
    up = np.zeros(k.shape)
    if np.any(on):
        up[on] = radio.uplink_rates(k[on], np.broadcast_to(p, k.shape)[on], ctx.gain_sq[on], ctx.cfg)
    return on, up


def _safe_div(num, den, mask):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=mask & (den > 0))
    out[mask & (den <= 0)] = np.inf
    return out


def stage1_delay(ctx: RoundContext, cut: int, k, p) -> tuple[float, np.ndarray]:
    """Layer-migration delay: downlink broadcast when growing, uplink when shrinking."""
    _check_migration(ctx, cut, k)
    bits = ctx.profile.migration_bits(ctx.prev_cut, cut)
    n = ctx.n_clients
    if bits == 0.0:
        per = np.zeros(n)
    elif cut > ctx.prev_cut:
        per = bits / ctx.dn_rate
    else:
        on, up = _rates(ctx, k, p)
        per = _safe_div(bits, up, on)
    return float(per.max(initial=0.0)), per


def stage2_delay(ctx: RoundContext, cut: int, k, p) -> tuple[float, np.ndarray]:
    """Client forward pass plus intermediate-output upload, max over participants."""
    on, up = _rates(ctx, k, p)
    prof, cfg = ctx.profile, ctx.cfg
    t_cfp = cfg.client_cycles_per_flop * prof.client_fp(cut) * ctx.n_samples / ctx.cpu_hz
    t_up = _safe_div(ctx.n_samples * prof.cut_output_bits(cut), up, on)
    per = np.where(on, t_cfp + t_up, 0.0)
    return float(per.max(initial=0.0)), per


def server_delays(ctx: RoundContext, cut: int, succ: np.ndarray) -> tuple[float, float]:
    """Expected server forward and backward time over all surviving samples."""
    cfg, prof = ctx.cfg, ctx.profile
    load = float(np.dot(succ, ctx.n_samples))
    t_sfp = cfg.server_cycles_per_flop * prof.server_fp(cut) * load / cfg.server_cpu_hz
    t_sbp = cfg.server_cycles_per_flop * prof.server_bp(cut) * load / cfg.server_cpu_hz
    return t_sfp, t_sbp


def stage3_delay_expected(ctx: RoundContext, cut: int, k, succ) -> tuple[float, np.ndarray]:
    """Expected stage-3 delay, given success probabilities 1 - s per client."""
    cfg, prof = ctx.cfg, ctx.profile
    succ = np.asarray(succ, dtype=float)
    on = np.asarray(k) >= 1
    t_sfp, t_sbp = server_delays(ctx, cut, succ)
    t_dn = succ * ctx.n_samples * prof.cut_gradient_bits(cut) / ctx.dn_rate
    t_cbp = cfg.client_cycles_per_flop * succ * prof.client_bp(cut) * ctx.n_samples / ctx.cpu_hz
    per = np.where(on, t_sfp + t_sbp + t_dn + t_cbp, 0.0)
    return float(per.max(initial=0.0)), per


def energies(ctx: RoundContext, cut: int, k, p, succ):
    """(E_MS, E_FP, E_UP, E_CBP) per client; zero for excluded clients."""
    prof = ctx.profile
    on, up = _rates(ctx, k, p)
    p = np.broadcast_to(np.asarray(p, dtype=float), on.shape)
    epf = ctx.compute_energy_per_flop()
    if cut < ctx.prev_cut:
        e_ms = _safe_div(prof.migration_bits(ctx.prev_cut, cut) * p, up, on)
    else:
        e_ms = np.zeros(on.shape)
    e_fp = np.where(on, ctx.n_samples * prof.client_fp(cut) * epf, 0.0)
    t_up = _safe_div(ctx.n_samples * prof.cut_output_bits(cut), up, on)
    e_up = np.where(np.isinf(t_up), np.inf, p * np.where(np.isinf(t_up), 0.0, t_up))
    e_cbp = np.where(on, np.asarray(succ) * ctx.n_samples * prof.client_bp(cut) * epf, 0.0)
    return e_ms, e_fp, e_up, e_cbp


def round_costs(ctx: RoundContext, cut: int, k, p) -> RoundCosts:
    k = np.asarray(k, dtype=int)
    p = np.asarray(p, dtype=float)
    succ = ctx.success(k, p)
    t1, t1c = stage1_delay(ctx, cut, k, p)
    t2, t2c = stage2_delay(ctx, cut, k, p)
    t3, t3c = stage3_delay_expected(ctx, cut, k, succ)
    e_ms, e_fp, e_up, e_cbp = energies(ctx, cut, k, p, succ)
    return RoundCosts(t1, t2, t3, t1 + t2 + t3, e_ms, e_fp, e_up, e_cbp,
                      e_ms + e_fp + e_up + e_cbp, 1.0 - succ, t1c, t2c, t3c)


def round_costs_for(ctx: RoundContext, dec: RoundDecisions) -> RoundCosts:
    if dec.prev_cut != ctx.prev_cut:
        raise ValueError("decision prev_cut does not match the round context")
    return round_costs(ctx, dec.cut, dec.rb_counts, dec.tx_powers)


@dataclass
class ClientTables:
    """Per-client costs for every RB count 0..K at a fixed cut and power.

    Row n, column k holds client n's value when it receives k RBs.  Column 0
    describes exclusion.  Stage delays and the server load are combined per
    candidate count vector in :func:`evaluate_counts`.
    """

    succ: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    t3_own: np.ndarray
    energy: np.ndarray
    load: np.ndarray
    server_per_load: float
    shrink: bool


def client_tables(ctx: RoundContext, cut: int, p) -> ClientTables:
    """Per-client tables; ``p`` has shape (N,) or (N, K + 1)."""
    cfg, prof = ctx.cfg, ctx.profile
    n, kmax = ctx.n_clients, cfg.n_rbs
    kk = np.broadcast_to(np.arange(kmax + 1), (n, kmax + 1))
    p = np.asarray(p, dtype=float)
    # p is per client, or per (client, RB count) when powers depend on the count
    pp = np.broadcast_to(p if p.ndim == 2 else np.broadcast_to(p, (n,))[:, None], kk.shape)
    succ = np.zeros(kk.shape)
    succ[:, 1:] = radio.success_probability(kk[:, 1:], pp[:, 1:], ctx.gain_sq[:, None],
                                            ctx.path_loss[:, None], cfg, ctx.fading)
    up = np.zeros(kk.shape)
    up[:, 1:] = radio.uplink_rates(kk[:, 1:], pp[:, 1:], ctx.gain_sq[:, None], cfg)
    on = kk >= 1
    d = ctx.n_samples[:, None]
    f = ctx.cpu_hz[:, None]
    bits = prof.migration_bits(ctx.prev_cut, cut)
    shrink = cut < ctx.prev_cut
    if bits == 0.0:
        t1 = np.zeros(kk.shape)
    elif not shrink:
        t1 = np.broadcast_to((bits / ctx.dn_rate)[:, None], kk.shape).copy()
    else:
        t1 = _safe_div(bits, up, on)
        t1[:, 0] = np.inf
    t_cfp = cfg.client_cycles_per_flop * prof.client_fp(cut) * d / f
    t_up = _safe_div(d * prof.cut_output_bits(cut), up, on)
    t2 = np.where(on, t_cfp + t_up, 0.0)
    t_dn = succ * d * prof.cut_gradient_bits(cut) / ctx.dn_rate[:, None]
    t_cbp = cfg.client_cycles_per_flop * succ * prof.client_bp(cut) * d / f
    t3_own = np.where(on, t_dn + t_cbp, 0.0)
    epf = ctx.compute_energy_per_flop()[:, None]
    e_ms = _safe_div(bits * pp, up, on) if shrink else 0.0
    # a silent transmitter never finishes the upload: infinite time, infinite energy
    e_up = np.where(np.isinf(t_up), np.inf, pp * np.where(np.isinf(t_up), 0.0, t_up))
    e = np.where(on, e_ms + d * prof.client_fp(cut) * epf + e_up + succ * d * prof.client_bp(cut) * epf, 0.0)
    server = cfg.server_cycles_per_flop * (prof.server_fp(cut) + prof.server_bp(cut)) / cfg.server_cpu_hz
    return ClientTables(succ, t1, t2, t3_own, e, succ * d, server, shrink)


@dataclass
class CountEvaluation:
    delay: np.ndarray  # expected total delay per candidate
    energy: np.ndarray  # (C, N) per-client expected energy
    succ: np.ndarray  # (C, N)


def column_index(counts: np.ndarray, width: int) -> np.ndarray:
    """(N, C) flat indices into a raveled (N, width) table, one row per client."""
    counts = np.asarray(counts, dtype=np.intp)
    return np.ascontiguousarray((counts + width * np.arange(counts.shape[1], dtype=np.intp)[None, :]).T)


def gather_reduce(table: np.ndarray, cols: np.ndarray, op: np.ufunc) -> np.ndarray:
    """op-reduce table values over clients for every candidate.

    Column-by-column accumulation is several times faster than a (C, N)
    gather followed by an axis reduction.
    """
    flat = np.ascontiguousarray(table, dtype=float).ravel()
    acc = flat[cols[0]]
    for row in cols[1:]:
        op(acc, flat[row], out=acc)
    return acc


def evaluate_counts(tab: ClientTables, counts: np.ndarray) -> CountEvaluation:
    """Vectorized delay/energy for a (C, N) matrix of candidate RB counts."""
    counts = np.asarray(counts)
    cols = column_index(counts, tab.succ.shape[1])
    return CountEvaluation(count_delays(tab, cols), tab.energy.ravel()[cols.T], tab.succ.ravel()[cols.T])


def count_delays(tab: ClientTables, cols: np.ndarray) -> np.ndarray:
    """Expected round delay for each candidate; ``cols`` from :func:`column_index`.

    Stage 3 is the shared server time plus the largest per-client
    downlink+BP time among participants (zero without participants).
    """
    t1 = gather_reduce(tab.t1, cols, np.maximum)
    t2 = gather_reduce(tab.t2, cols, np.maximum)
    server = tab.server_per_load * gather_reduce(tab.load, cols, np.add)
    own = gather_reduce(tab.t3_own, cols, np.maximum)
    rb_table = np.broadcast_to(np.arange(tab.succ.shape[1], dtype=float), tab.succ.shape)
    any_on = gather_reduce(rb_table, cols, np.add) > 0
    return t1 + t2 + np.where(any_on, server + own, 0.0)
