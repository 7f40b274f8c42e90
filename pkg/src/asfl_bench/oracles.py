"""Slow, independent reference implementations used for differential testing.

Each oracle recomputes its answer by brute force or simulation without the
shortcuts the production solvers rely on (count-space reduction, closed
forms, tabulation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import learner, radio
from .cost import InfeasibleDecision, RoundContext, round_costs
from .objective import ObjectiveInputs
from .rb_solver import count_vectors, naive_matrices


# -- packet error rate ------------------------------------------------------

@dataclass
class FadingTriple:
    ratio: float  # c / theta
    quadrature: float
    bessel: float
    monte_carlo: float
    mc_stderr: float

    @property
    def z_score(self) -> float:
        return abs(self.quadrature - self.monte_carlo) / self.mc_stderr if self.mc_stderr > 0 else 0.0


def fading_triple(c: float, theta: float, draws: int = 10_000_000, seed: int = 0) -> FadingTriple:
    """Quadrature, Bessel closed form and Monte Carlo for E[exp(-c/X)]."""
    mc, se = radio.monte_carlo_fading(c, theta, draws, seed)
    return FadingTriple(c / theta, float(radio.fading_expectation(c, theta)),
                        float(radio.fading_expectation_bessel(c, theta)), float(mc), float(se))


# -- learner gradients ------------------------------------------------------

def finite_difference_gradients(layers, x, y, loss: str = "xent", eps: float = 1e-6) -> list:
    """Central differences of the unsplit loss for every weight and bias."""
    work = [(w.copy(), b.copy()) for w, b in layers]
    out = []
    for m in range(len(work)):
        pair = []
        for arr in work[m]:
            grad = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                keep = arr[idx]
                arr[idx] = keep + eps
                up = learner.full_loss(work, x, y, loss)
                arr[idx] = keep - eps
                down = learner.full_loss(work, x, y, loss)
                arr[idx] = keep
                grad[idx] = (up - down) / (2.0 * eps)
            pair.append(grad)
        out.append(tuple(pair))
    return out


def gradient_relative_error(analytic, numeric) -> float:
    """Largest absolute gap over the largest numeric gradient entry."""
    a = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in analytic])
    f = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in numeric])
    scale = float(np.max(np.abs(f)))
    return float(np.max(np.abs(a - f)) / scale) if scale > 0 else float(np.max(np.abs(a)))


# -- cost model by simulation -----------------------------------------------

@dataclass
class BernoulliEstimate:
    stage3_mean: np.ndarray  # per participant, realized stage-3 time
    stage3_stderr: np.ndarray
    energy_mean: np.ndarray  # per client, realized total energy
    energy_stderr: np.ndarray
    stage3_max_mean: float  # E[max] (reported, not compared)
    stage3_stderr_null: np.ndarray  # exact standard error of the mean under independent survivals
    energy_stderr_null: np.ndarray
    survival: np.ndarray


def bernoulli_round(ctx: RoundContext, cut: int, k, p, trials: int = 100_000, seed: int = 0,
                    chunk: int = 20_000) -> BernoulliEstimate:
    """Simulate packet survival with frozen channels and average the costs.

    Rates, workloads and energies are recomputed here from the raw
    parameters so the check does not share code with the cost module.
    """
    cfg, prof = ctx.cfg, ctx.profile
    k = np.asarray(k, dtype=float)
    p = np.asarray(p, dtype=float)
    on = k >= 1
    h, d, f = ctx.gain_sq, ctx.n_samples, ctx.cpu_hz
    b, n0 = cfg.rb_bandwidth_hz, cfg.noise_psd_w_per_hz
    kk = np.where(on, k, 1.0)
    up = kk * b * np.log2(1.0 + p * h / (b * n0))
    dn = cfg.downlink_bandwidth_hz * np.log2(1.0 + cfg.server_tx_power_w * h / (cfg.downlink_bandwidth_hz * n0))
    surv = np.where(on, np.exp(-cfg.waterfall_threshold * b * n0 * kk / (p * h)), 0.0)

    n_layers = prof.n_layers
    client_fp = sum(prof.flops_fp[m] for m in range(cut))
    client_bp = sum(prof.flops_bp[m] for m in range(cut))
    server_flops = sum(prof.flops_fp[m] + prof.flops_bp[m] for m in range(cut, n_layers))
    q = prof.output_bits[cut - 1]
    psi_next = prof.size_bits[cut]
    per_joule = cfg.energy_coeff * cfg.client_cycles_per_flop * f ** 2

    fixed_energy = np.where(on, d * client_fp * per_joule + p * d * q / up, 0.0)
    if cut < ctx.prev_cut:
        moved = sum(prof.size_bits[m] for m in range(cut, ctx.prev_cut))
        fixed_energy = fixed_energy + np.where(on, p * moved / up, 0.0)
    own = d * psi_next / dn + cfg.client_cycles_per_flop * client_bp * d / f
    server_rate = cfg.server_cycles_per_flop * server_flops / cfg.server_cpu_hz

    g = np.random.default_rng(seed)
    n = len(h)
    s3 = np.zeros(n)
    s3_sq = np.zeros(n)
    en = np.zeros(n)
    en_sq = np.zeros(n)
    mx = 0.0
    left = trials
    while left > 0:
        m = min(chunk, left)
        beta = (g.random((m, n)) < surv[None, :]) & on[None, :]
        load = (beta * d[None, :]).sum(axis=1, keepdims=True)
        t3 = np.where(on[None, :], server_rate * load + beta * own[None, :], 0.0)
        e = fixed_energy[None, :] + beta * (d * client_bp * per_joule)[None, :]
        s3 += t3.sum(axis=0)
        s3_sq += (t3 * t3).sum(axis=0)
        en += e.sum(axis=0)
        en_sq += (e * e).sum(axis=0)
        mx += t3.max(axis=1).sum()
        left -= m

    def stats(total, total_sq):
        mean = total / trials
        var = np.maximum(total_sq / trials - mean * mean, 0.0)
        return mean, np.sqrt(var / trials)

    m3, se3 = stats(s3, s3_sq)
    me, see = stats(en, en_sq)
    # t3_n = server_rate * sum_m beta_m d_m + beta_n own_n is linear in independent survivals
    bern_var = surv * (1.0 - surv)
    coef = server_rate * d[None, :] + np.diag(own)
    var3 = np.where(on, (coef * coef * bern_var[None, :]).sum(axis=1), 0.0)
    var_e = (d * client_bp * per_joule) ** 2 * bern_var
    return BernoulliEstimate(m3, se3, me, see, mx / trials, np.sqrt(var3 / trials), np.sqrt(var_e / trials), surv)


# -- resource blocks ----------------------------------------------------------

@dataclass
class RbOracleResult:
    counts: np.ndarray
    objective: float
    feasible: bool
    matrices_checked: int


def naive_rb(ctx: RoundContext, cut: int, p, inputs: ObjectiveInputs, mode: str = "consistent",
             tol: float = 1e-12) -> RbOracleResult:
    """Enumerate every binary N x K allocation matrix and cost each one directly.

    Infeasible instances fall back to the smallest worst relative violation,
    mirroring the production rule.  Ties resolve to the lexicographically
    smallest row-sum vector.
    """
    cfg = ctx.cfg
    gamma, delta = cfg.delay_budget_s, cfg.energy_budget_j
    rows = []
    checked = 0
    for u in naive_matrices(ctx.n_clients, cfg.n_rbs):
        checked += 1
        counts = u.sum(axis=1)
        try:
            c = round_costs(ctx, cut, counts, p)
        except InfeasibleDecision:
            rows.append((tuple(counts), np.inf, False, np.inf))
            continue
        ok = c.t_total_expected_s <= gamma and bool(np.all(c.e_total_expected_j <= delta))
        viol = max((c.t_total_expected_s - gamma) / gamma, float(np.max((c.e_total_expected_j - delta) / delta)))
        rows.append((tuple(counts), float(inputs.value(1.0 - c.s, mode)), ok, viol))
    feas = [r for r in rows if r[2]]
    if feas:
        best = min(r[1] for r in feas)
        pool = [r for r in feas if r[1] <= best + tol * max(1.0, abs(best))]
    else:
        best_v = min(r[3] for r in rows)
        pool = [r for r in rows if r[3] <= best_v + tol * max(1.0, abs(best_v))]
    pick = min(pool, key=lambda r: r[0])
    return RbOracleResult(np.array(pick[0]), pick[1], bool(feas), checked)


# -- cut search ----------------------------------------------------------------

def brute_split(queues, memory: float, penalty_weight: float, cuts, evaluate) -> tuple[int, float]:
    """Drift-plus-penalty for every cut, written out element by element."""
    best = None
    for cut in sorted(cuts):
        try:
            g, obj = evaluate(cut)
        except InfeasibleDecision:
            continue
        before = sum(float(qv) ** 2 for qv in queues)
        after = sum(max(memory * float(qv) + (1.0 - memory) * float(gv), 0.0) ** 2 for qv, gv in zip(queues, g))
        val = 0.5 * (after - before) + penalty_weight * float(obj)
        if best is None or val < best[1]:
            best = (cut, val)
    if best is None:
        raise InfeasibleDecision("every cut is infeasible")
    return best


# -- transmit power ------------------------------------------------------------

def surrogate_branch(lo: float, hi: float, w2: float, w3: float) -> str:
    """Theorem-style case label stated in y = exp(1/p) coordinates.

    With r = -w3 / (2 w2) the surrogate w2 y^2 + w3 y is minimized at y = r.
    C1: r > exp(1/lo) (the minimizer lies left of lo in p); C2:
    exp(1/hi) <= r <= exp(1/lo); otherwise the upper end is optimal.
    """
    if not (w2 > 0 and w3 < 0):
        return "otherwise"
    r = -w3 / (2.0 * w2)
    if r <= 1.0:
        return "otherwise"
    with np.errstate(over="ignore"):
        y_lo = np.exp(1.0 / lo) if lo > 0 else np.inf
        y_hi = np.exp(1.0 / hi) if hi > 0 else np.inf
    if r > y_lo:
        return "C1"
    if y_hi <= r <= y_lo:
        return "C2"
    return "otherwise"


def surrogate_oracle(lo: float, hi: float, w2: float, w3: float, resolution: int = 10_000) -> tuple[float, float, str]:
    """Grid minimizer of the surrogate, its grid step, and the case label."""
    grid = np.linspace(lo, hi, resolution)
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.exp(1.0 / np.maximum(grid, 1e-300))
        vals = w2 * y * y + w3 * y
    vals = np.where(np.isfinite(vals), vals, np.inf)
    step = float(grid[1] - grid[0]) if resolution > 1 else 0.0
    return float(grid[int(np.argmin(vals))]), step, surrogate_branch(lo, hi, w2, w3)


# -- joint problem ---------------------------------------------------------------

@dataclass
class JointOptimum:
    cut: int
    counts: np.ndarray
    p: np.ndarray
    g_obj: float
    combinations: int


def _replicated(ctx: RoundContext, i: int, size: int) -> RoundContext:
    rep = lambda v: np.full(size, np.asarray(v, dtype=float)[i])
    return RoundContext(ctx.cfg, ctx.profile, rep(ctx.gain_sq), rep(ctx.path_loss), rep(ctx.cpu_hz),
                        rep(ctx.n_samples), ctx.prev_cut, ctx.fading)


def joint_brute_force(ctx: RoundContext, inputs_for_cut, cuts=None, power_points: int = 200,
                      mode: str = "consistent") -> JointOptimum | None:
    """Minimize g_obj over cut x count vector x per-client power grid.

    Powers range over P_max * (1..G)/G.  Clients without RBs have no power
    dimension.  Returns None when no combination meets the budgets.
    """
    cfg, prof = ctx.cfg, ctx.profile
    n = ctx.n_clients
    cuts = cfg.cuts() if cuts is None else cuts
    grid = cfg.max_tx_power_w * np.arange(1, power_points + 1) / power_points
    server_rate = cfg.server_cycles_per_flop * 1.0 / cfg.server_cpu_hz
    best: JointOptimum | None = None
    combos = 0
    for cut in cuts:
        inputs = inputs_for_cut(cut)
        server = server_rate * (prof.server_fp(cut) + prof.server_bp(cut))
        for counts in count_vectors(n, cfg.n_rbs):
            on = counts >= 1
            if cut < ctx.prev_cut and not np.all(on):
                continue
            per = []
            for i in range(n):
                size = power_points if on[i] else 1
                powers = grid if on[i] else np.array([0.0])
                rc = round_costs(_replicated(ctx, i, size), cut, np.full(size, counts[i]), powers)
                succ = 1.0 - rc.s
                own = succ * (ctx.n_samples[i] * prof.cut_gradient_bits(cut) / ctx.dn_rate[i]
                              + cfg.client_cycles_per_flop * prof.client_bp(cut) * ctx.n_samples[i] / ctx.cpu_hz[i])
                s_term = inputs.client_term[i] + _server_term(inputs, i, succ, mode)
                per.append(dict(p=powers, t1=rc.t1_client, t2=rc.t2_client, own=np.where(on[i], own, 0.0),
                                load=succ * ctx.n_samples[i], e=rc.e_total_expected_j, obj=s_term))
            shape = [len(c["p"]) for c in per]
            combos += int(np.prod(shape))

            def axis(i, key):
                v = per[i][key]
                s = [1] * n
                s[i] = len(v)
                return v.reshape(s)

            t1 = _reduce(np.maximum, [axis(i, "t1") for i in range(n)])
            t2 = _reduce(np.maximum, [axis(i, "t2") for i in range(n)])
            own = _reduce(np.maximum, [axis(i, "own") for i in range(n)])
            load = _reduce(np.add, [axis(i, "load") for i in range(n)])
            delay = t1 + t2 + (server * load + own if on.any() else 0.0)
            ok = delay <= cfg.delay_budget_s
            for i in range(n):
                ok = ok & (axis(i, "e") <= cfg.energy_budget_j)
            obj = _reduce(np.add, [axis(i, "obj") for i in range(n)]) / n
            obj = np.broadcast_to(obj, np.broadcast(obj, ok).shape)
            ok = np.broadcast_to(ok, obj.shape)
            if not ok.any():
                continue
            masked = np.where(ok, obj, np.inf)
            j = np.unravel_index(int(np.argmin(masked)), masked.shape)
            val = float(masked[j])
            if best is None or val < best.g_obj:
                p = np.array([per[i]["p"][j[i] if shape[i] > 1 else 0] for i in range(n)])
                best = JointOptimum(cut, counts.copy(), p, val, 0)
    if best is not None:
        best.combinations = combos
    return best


def _server_term(inputs: ObjectiveInputs, i: int, succ, mode: str):
    if mode == "consistent":
        return inputs.server_norm_sq - 2.0 * succ * inputs.server_inner[i] + succ * succ * inputs.server_self_sq[i]
    return succ * succ * inputs.server_norm_sq


def _reduce(op, arrays):
    out = arrays[0]
    for a in arrays[1:]:
        out = op(out, a)
    return out

