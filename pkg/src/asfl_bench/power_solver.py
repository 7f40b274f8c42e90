"""Transmit-power subproblem.

Six auxiliary budgets split the round's delay and energy budgets into
per-stage pieces.  Given budgets, each client's power lies in an interval
[lo, hi]; the closed form picks a point in it, and the budgets are refreshed
from the realized per-stage maxima until the objective settles.

Two ways to build the interval:

* ``verbatim``: the printed closed-form bounds, including the Taylor
  expanded energy bounds, which cap SNR at 2 and so are loose at high SNR.
* ``exact``: each per-client component constraint is solved for p
  directly (closed form for the delay lower bounds, bisection for the
  monotone upper bounds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import radio
from .cost import RoundContext, round_costs
from .objective import ObjectiveInputs

BRANCHES = ("C1", "C2", "otherwise")


@dataclass
class AuxBudgets:
    """Stage budgets: delays (s) for migration, forward+upload and stage 3;
    energies (J) for migration upload, intermediate upload and client BP."""

    t_migrate: float
    t_forward: float
    t_backward: float
    e_migrate: float
    e_upload: float
    e_backward: float

    @classmethod
    def proportional(cls, delay_budget: float, energy_left: float) -> "AuxBudgets":
        t = delay_budget / 3.0
        e = max(energy_left, 0.0) / 3.0
        return cls(t, t, t, e, e, e)

    def as_array(self) -> np.ndarray:
        return np.array([self.t_migrate, self.t_forward, self.t_backward,
                         self.e_migrate, self.e_upload, self.e_backward])


@dataclass
class PowerBounds:
    """Per-client bound values and the clipped interval.

    lower rows: migration delay, forward+upload delay.
    upper rows: stage-3 delay, migration energy, upload energy, BP energy.
    Inactive bounds hold 0 (lower) or +inf (upper).
    """

    lower: np.ndarray
    upper: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    empty: np.ndarray


@dataclass
class ComponentValues:
    t_migrate: np.ndarray
    t_forward: np.ndarray
    t_backward: np.ndarray
    e_migrate: np.ndarray
    e_forward: np.ndarray
    e_upload: np.ndarray
    e_backward: np.ndarray


def components(ctx: RoundContext, cut: int, k, p) -> ComponentValues:
    c = round_costs(ctx, cut, k, p)
    return ComponentValues(c.t1_client, c.t2_client, c.t3_client, c.e_ms_j, c.e_fp_j, c.e_up_j, c.e_cbp_expected_j)


def zero_fading_success(ctx: RoundContext, k) -> np.ndarray:
    """E[exp(-alpha B N0 k / |h|^2)]: the success probability at unit power."""
    k = np.asarray(k)
    c = radio.error_exponent(np.maximum(k, 1), ctx.cfg)
    if ctx.fading == "frozen":
        return np.exp(-c / ctx.gain_sq)
    return np.asarray(radio.fading_expectation(c, ctx.path_loss))


def stage3_constant(ctx: RoundContext, cut: int) -> np.ndarray:
    """Per-client stage-3 delay at unit success probability (omega1)."""
    cfg, prof = ctx.cfg, ctx.profile
    d = ctx.n_samples
    return (cfg.server_cycles_per_flop * d * (prof.server_fp(cut) + prof.server_bp(cut)) / cfg.server_cpu_hz
            + cfg.client_cycles_per_flop * d * prof.client_bp(cut) / ctx.cpu_hz
            + prof.cut_gradient_bits(cut) / ctx.dn_rate)


def omega_coefficients(ctx: RoundContext, cut: int, k, inputs: ObjectiveInputs):
    """(omega1, omega2, omega3) per client.

    omega1 is the stage-3 delay constant; omega2 and omega3 are the
    quadratic coefficients of the server term.
    """
    e0 = zero_fading_success(ctx, k)
    return stage3_constant(ctx, cut), e0 ** 2 * inputs.server_self_sq, -2.0 * e0 * inputs.server_inner


def _shrink_bits(ctx: RoundContext, cut: int) -> float:
    return ctx.profile.migration_bits(ctx.prev_cut, cut) if cut < ctx.prev_cut else 0.0


def _inv_log(arg: np.ndarray) -> np.ndarray:
    """1/ln(arg) with the inactive convention: arg <= 1 gives +inf."""
    out = np.full(arg.shape, np.inf)
    ok = arg > 1.0
    out[ok] = 1.0 / np.log(arg[ok])
    return out


def verbatim_bounds(aux: AuxBudgets, ctx: RoundContext, cut: int, k) -> tuple[np.ndarray, np.ndarray]:
    cfg, prof = ctx.cfg, ctx.profile
    k = np.maximum(np.asarray(k, dtype=float), 1.0)
    b, n0, h, d, f = cfg.rb_bandwidth_hz, cfg.noise_psd_w_per_hz, ctx.gain_sq, ctx.n_samples, ctx.cpu_hz
    dpsi = _shrink_bits(ctx, cut)
    q = prof.cut_output_bits(cut)
    vfp, vbp = prof.client_fp(cut), prof.client_bp(cut)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if dpsi == 0.0:
            c1 = np.zeros_like(h)
        elif aux.t_migrate <= 0:
            c1 = np.full_like(h, np.inf)
        else:
            c1 = b * n0 * (2.0 ** (dpsi / (aux.t_migrate * b * k)) - 1.0) / h
        den = (aux.t_forward * f - cfg.client_cycles_per_flop * d * b * vfp) * k
        c2 = np.where(den > 0, b * n0 * (2.0 ** (f * q / np.where(den > 0, den, 1.0)) - 1.0) / h, np.inf)
        w1 = stage3_constant(ctx, cut)
        e0 = zero_fading_success(ctx, k)
        c3 = np.where(w1 > aux.t_backward, _inv_log((w1 - aux.t_backward) / (w1 * e0)), np.inf)
        if dpsi == 0.0:
            c4 = np.full_like(h, np.inf)
        else:
            c4 = 2 * b * n0 / h * (1.0 - dpsi * n0 * math.log(2) / (aux.e_migrate * k * h))
            c4 = np.where(c4 > 0, c4, np.inf)
        c5 = 2 * b * n0 / h * (1.0 - d * n0 * math.log(2) * q / (aux.e_upload * k * h))
        c5 = np.where(c5 > 0, c5, np.inf)
        x = d * vbp * cfg.energy_coeff * cfg.client_cycles_per_flop * f ** 2
        num = x * k - aux.e_backward
        c6 = np.where(num > 0, _inv_log(num / (e0 * x)), np.inf)
    return np.vstack([c1, c2]), np.vstack([c3, c4, c5, c6])


def _sup_below(fun_at, budget: np.ndarray, pmax: float) -> np.ndarray:
    """sup{p in [0, pmax] : fun(p) <= budget} for increasing ``fun``.

    ``fun_at(p, idx)`` evaluates the clients ``idx``.  +inf when the bound
    never binds below pmax, 0 when even a vanishing power fails.
    """
    n = budget.shape[0]
    out = np.full(n, np.inf)
    at_max = fun_at(np.full(n, pmax), np.arange(n))
    binds = at_max > budget
    if not np.any(binds):
        return out
    sub = np.flatnonzero(binds)
    floor = np.full(sub.size, pmax * 1e-12)
    fits = fun_at(floor, sub) <= budget[sub]
    lo = np.where(fits, floor, 0.0)
    good = sub[fits]
    if good.size:
        b = budget[good]
        lo_g, _ = _illinois(lambda p: b - fun_at(p, good), floor[fits], np.full(good.size, pmax))
        lo[fits] = lo_g
    out[binds] = lo
    return out


def _stacked(ctx: RoundContext) -> RoundContext:
    """The same clients listed twice (only per-client fields are used)."""
    two = lambda v: np.concatenate([v, v])
    return RoundContext(ctx.cfg, ctx.profile, two(ctx.gain_sq), two(ctx.path_loss), two(ctx.cpu_hz),
                        two(ctx.n_samples), ctx.prev_cut, ctx.fading)


def _illinois(fun, lo: np.ndarray, hi: np.ndarray, xtol: float = 1e-13, max_steps: int = 100) -> np.ndarray:
    """Root of a decreasing ``fun`` bracketed by fun(lo) > 0 >= fun(hi).

    Vectorized regula falsi with the Illinois modification.  Returns the
    final bracket (lo, hi) with fun(lo) > 0 >= fun(hi).
    """
    lo, hi = lo.copy(), hi.copy()
    f_lo, f_hi = fun(lo), fun(hi)
    side = np.zeros(lo.shape, dtype=int)
    for _ in range(max_steps):
        width = hi - lo
        if np.all(width <= xtol * np.maximum(1.0, np.abs(hi))):
            break
        denom = f_lo - f_hi
        x = np.where(denom > 0, lo + f_lo * width / np.where(denom > 0, denom, 1.0), 0.5 * (lo + hi))
        # keep strictly inside the bracket
        x = np.clip(x, lo + 0.01 * width, hi - 0.01 * width)
        fx = fun(x)
        pos = fx > 0
        lo = np.where(pos, x, lo)
        f_lo = np.where(pos, fx, np.where(side == -1, 0.5 * f_lo, f_lo))
        hi = np.where(pos, hi, x)
        f_hi = np.where(pos, np.where(side == 1, 0.5 * f_hi, f_hi), fx)
        side = np.where(pos, 1, -1)
    return lo, hi


def _power_for_success(ctx: RoundContext, k, target: np.ndarray, pmax: float) -> np.ndarray:
    """Largest p in [0, pmax] whose success probability stays <= target."""
    k = np.maximum(np.asarray(k), 1)
    c = radio.error_exponent(k, ctx.cfg)
    out = np.full(target.shape, np.inf)
    at_max = ctx.success(k, np.full(target.shape, pmax))
    binds = at_max > target
    out[binds & (target <= 0)] = 0.0
    todo = binds & (target > 0)
    if not np.any(todo):
        return out
    t = target[todo]
    if ctx.fading == "frozen":
        out[todo] = -c[todo] / (ctx.gain_sq[todo] * np.log(t))
        return out
    # success = F(c / (p theta)) with F decreasing; bisect on log(c/(p theta))
    theta = ctx.path_loss[todo]
    lo_a = np.log(c[todo] / (pmax * theta))  # F(exp(lo_a)) > t
    hi_a = lo_a + 1.0
    while True:
        val = np.asarray(radio.fading_expectation(np.exp(hi_a) * theta, theta))
        bad = val > t
        if not np.any(bad):
            break
        hi_a = np.where(bad, hi_a + 2.0 * (hi_a - lo_a), hi_a)
    # log(-log F) is close to linear in log a, which suits regula falsi
    level = np.log(-np.log(t))

    def gap(u):
        f = np.asarray(radio.fading_expectation(np.exp(u) * theta, theta))
        with np.errstate(divide="ignore"):
            return level - np.log(np.maximum(-np.log(f), 1e-300))

    _, hi_a = _illinois(gap, lo_a, hi_a)
    out[todo] = c[todo] / (np.exp(hi_a) * theta)
    return out


def exact_bounds(aux: AuxBudgets, ctx: RoundContext, cut: int, k, p_current) -> tuple[np.ndarray, np.ndarray]:
    cfg, prof = ctx.cfg, ctx.profile
    k = np.asarray(k)
    kf = np.maximum(k, 1).astype(float)
    b, n0, h, d, f = cfg.rb_bandwidth_hz, cfg.noise_psd_w_per_hz, ctx.gain_sq, ctx.n_samples, ctx.cpu_hz
    pmax = cfg.max_tx_power_w
    dpsi = _shrink_bits(ctx, cut)
    q = prof.cut_output_bits(cut)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if dpsi == 0.0:
            c1 = np.zeros_like(h)
        elif aux.t_migrate <= 0:
            c1 = np.full_like(h, np.inf)
        else:
            c1 = b * n0 * (2.0 ** (dpsi / (aux.t_migrate * b * kf)) - 1.0) / h
        left = aux.t_forward - cfg.client_cycles_per_flop * prof.client_fp(cut) * d / f
        c2 = np.where(left > 0, b * n0 * (2.0 ** (d * q / (kf * b * np.where(left > 0, left, 1.0))) - 1.0) / h, np.inf)

    def tx_energy(bits):
        bits = np.broadcast_to(bits, h.shape)

        def energy(p, idx):
            return p * bits[idx] / radio.uplink_rates(kf[idx], p, h[idx], cfg)
        return energy

    c4 = np.full_like(h, np.inf) if dpsi == 0.0 else _sup_below(tx_energy(dpsi), np.full_like(h, aux.e_migrate), pmax)
    c5 = _sup_below(tx_energy(d * q), np.full_like(h, aux.e_upload), pmax)
    # stage-3 delay and BP energy both grow with the success probability
    succ_now = ctx.success(k, p_current)
    server = cfg.server_cycles_per_flop * (prof.server_fp(cut) + prof.server_bp(cut)) / cfg.server_cpu_hz
    load_others = float(np.dot(succ_now, d)) - succ_now * d
    own = d * prof.cut_gradient_bits(cut) / ctx.dn_rate + cfg.client_cycles_per_flop * prof.client_bp(cut) * d / f
    with np.errstate(divide="ignore", invalid="ignore"):
        t3_target = (aux.t_backward - server * load_others) / (server * d + own)
        x = d * prof.client_bp(cut) * ctx.compute_energy_per_flop()
        e3_target = np.where(x > 0, aux.e_backward / np.where(x > 0, x, 1.0), np.inf)
    # one root-finding pass for both success caps
    n = len(h)
    both = _power_for_success(_stacked(ctx), np.concatenate([k, k]),
                              np.concatenate([np.nan_to_num(t3_target, nan=np.inf), e3_target]), pmax)
    c3, c6 = both[:n], both[n:]
    return np.vstack([c1, c2]), np.vstack([c3, c4, c5, c6])


def power_bounds(aux: AuxBudgets, ctx: RoundContext, cut: int, k, p_current=None, mode: str = "verbatim") -> PowerBounds:
    """Feasible power interval per client under the given budgets."""
    pmax = ctx.cfg.max_tx_power_w
    if mode == "verbatim":
        lower, upper = verbatim_bounds(aux, ctx, cut, k)
    elif mode == "exact":
        if p_current is None:
            p_current = np.full(ctx.n_clients, pmax)
        lower, upper = exact_bounds(aux, ctx, cut, k, p_current)
    else:
        raise ValueError(f"unknown bounds mode {mode!r}")
    lo = np.maximum(np.maximum(lower[0], lower[1]), 0.0)
    hi = np.minimum(pmax, upper.min(axis=0))
    empty = (lo > hi) | (hi <= 0)
    return PowerBounds(lower, upper, lo, hi, empty)


def closed_form_power(lo, hi, w2, w3):
    """Critical-point rule for each client.

    Returns (p, branch labels, degenerate flags).  The critical point is
    1/ln(-w3/(2 w2)); C1 picks lo when it lies below lo, C2 picks it when
    inside [lo, hi], otherwise hi.
    """
    lo, hi, w2, w3 = (np.asarray(a, dtype=float) for a in (lo, hi, w2, w3))
    n = lo.shape[0]
    p = hi.copy()
    branch = np.array(["otherwise"] * n, dtype=object)
    degenerate = np.zeros(n, dtype=bool)
    neg = w3 < 0
    degenerate |= neg & (w2 <= 0)
    usable = neg & (w2 > 0)
    ratio = np.where(usable, -w3 / np.where(w2 > 0, 2.0 * w2, 1.0), 0.0)
    degenerate |= usable & (ratio <= 1.0)
    ok = usable & (ratio > 1.0)
    crit = np.full(n, np.nan)
    crit[ok] = 1.0 / np.log(ratio[ok])
    c1 = ok & (crit < lo)
    c2 = ok & (crit >= lo) & (crit <= hi)
    p[c1] = lo[c1]
    p[c2] = crit[c2]
    branch[c1] = "C1"
    branch[c2] = "C2"
    return p, branch, degenerate


def surrogate_value(p, w2, w3):
    """w2 y^2 + w3 y with y = exp(1/p): the function the critical-point rule minimizes exactly."""
    y = np.exp(1.0 / np.asarray(p, dtype=float))
    return w2 * y * y + w3 * y


def surrogate_grid(lo: float, hi: float, w2: float, w3: float, resolution: int = 10_000):
    grid = np.linspace(lo, hi, resolution)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = surrogate_value(np.maximum(grid, 1e-300), w2, w3)
    vals = np.where(np.isfinite(vals), vals, np.inf)
    i = int(np.argmin(vals))
    return float(grid[i]), float(grid[1] - grid[0]) if resolution > 1 else 0.0


def per_client_objective(ctx: RoundContext, k, p, inputs: ObjectiveInputs, mode: str) -> np.ndarray:
    """Server term S_n as a function of each client's own power."""
    return inputs.server_terms(ctx.success(k, p), mode)


def grid_oracle(ctx: RoundContext, k, inputs: ObjectiveInputs, lo, hi, resolution: int = 1000,
                mode: str = "consistent") -> np.ndarray:
    """Per-client minimizer of the exact objective on [lo, hi].

    Dense grid followed by a local golden-section refinement in the best
    cell.  Flat objectives resolve to the smallest feasible power.
    """
    if resolution < 100:
        raise ValueError("resolution must be >= 100")
    k = np.asarray(k)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = len(k)
    out = np.zeros(n)
    t = np.linspace(0.0, 1.0, resolution)
    for i in range(n):
        if k[i] < 1 or not lo[i] <= hi[i]:
            out[i] = lo[i] if np.isfinite(lo[i]) else 0.0
            continue
        grid = lo[i] + (hi[i] - lo[i]) * t
        kk = np.full(resolution, k[i])
        sub = ctx_client(ctx, i)
        vals = inputs_for_client(inputs, i).server_terms(sub.success(kk, grid), mode)
        best = float(vals.min())
        j = int(np.flatnonzero(vals <= best + 1e-15 * max(1.0, abs(best)))[0])
        a = grid[max(j - 1, 0)]
        b = grid[min(j + 1, resolution - 1)]
        if b > a and 0 < j < resolution - 1:
            out[i] = _golden(lambda x: float(inputs_for_client(inputs, i).server_terms(sub.success([k[i]], [x]), mode)[0]),
                             a, b, grid[j], best)
        else:
            out[i] = grid[j]
    return out


def _golden(fun, a, b, x0, f0, steps: int = 60):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(steps):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    x = c if fc <= fd else d
    return x if min(fc, fd) < f0 else x0


def ctx_client(ctx: RoundContext, i: int) -> RoundContext:
    """Single-client view of a round context (for per-client solves)."""
    return RoundContext(ctx.cfg, ctx.profile, ctx.gain_sq[i:i + 1], ctx.path_loss[i:i + 1],
                        ctx.cpu_hz[i:i + 1], ctx.n_samples[i:i + 1], ctx.prev_cut, ctx.fading)


def inputs_for_client(inputs: ObjectiveInputs, i: int) -> ObjectiveInputs:
    return ObjectiveInputs(inputs.client_term[i:i + 1], inputs.server_norm_sq, inputs.server_inner[i:i + 1],
                           inputs.server_self_sq[i:i + 1], inputs.iota)


@dataclass
class PowerResult:
    p: np.ndarray
    budgets: AuxBudgets
    bounds: PowerBounds
    branch: np.ndarray
    iterations: int
    converged: bool
    fallback: np.ndarray
    degenerate: np.ndarray
    history: list[float] = field(default_factory=list)
    constraint_violations: list[str] = field(default_factory=list)


def energy_caps(ctx: RoundContext, cut: int) -> np.ndarray:
    """(N, K + 1) table of the largest power in [0, P_max] at which client n
    meets the energy budget alone with k RBs (column 0 unused, +inf).

    0 when even a vanishing power overruns the budget, +inf when P_max fits.
    """
    cfg, prof = ctx.cfg, ctx.profile
    n, kmax = ctx.n_clients, cfg.n_rbs
    kk = np.repeat(np.arange(1, kmax + 1)[None, :], n, axis=0).ravel()
    rows = np.repeat(np.arange(n), kmax)
    flat = RoundContext(cfg, prof, ctx.gain_sq[rows], ctx.path_loss[rows], ctx.cpu_hz[rows], ctx.n_samples[rows],
                        ctx.prev_cut, ctx.fading)

    def energy(p, idx):
        sub = RoundContext(cfg, prof, flat.gain_sq[idx], flat.path_loss[idx], flat.cpu_hz[idx], flat.n_samples[idx],
                           ctx.prev_cut, ctx.fading)
        with np.errstate(divide="ignore", invalid="ignore"):
            return round_costs(sub, cut, kk[idx], p).e_total_expected_j

    caps = _sup_below(energy, np.full(kk.shape, cfg.energy_budget_j), cfg.max_tx_power_w)
    out = np.full((n, kmax + 1), np.inf)
    out[:, 1:] = caps.reshape(n, kmax)
    return out


def refresh_budgets(ctx: RoundContext, cut: int, k, p, current: AuxBudgets | None = None) -> AuxBudgets:
    """Budgets set to the realized per-stage maxima over participants, then
    any slack left in the delay and energy totals is shared equally (or the
    budgets are scaled down when the totals are exceeded)."""
    cfg = ctx.cfg
    on = np.asarray(k) >= 1
    comp = components(ctx, cut, k, p)

    def top(v):
        v = v[on]
        return float(v.max()) if v.size else 0.0

    t = np.array([top(comp.t_migrate), top(comp.t_forward), top(comp.t_backward)])
    e = np.array([top(comp.e_migrate), top(comp.e_upload), top(comp.e_backward)])
    t = _share_slack(t, cfg.delay_budget_s)
    e = _share_slack(e, max(cfg.energy_budget_j - top(comp.e_forward), 0.0))
    return AuxBudgets(*t, *e)


def _share_slack(v: np.ndarray, total: float) -> np.ndarray:
    s = v.sum()
    if s > total:
        return v * (total / s) if s > 0 else v
    return v + (total - s) / len(v)


def _soft_fallback(ctx: RoundContext, cut: int, k, p, i: int, aux: AuxBudgets, inputs, mode, resolution=200):
    """Grid over (0, P_max] minimizing the worst relative budget overrun,
    then the objective, then the power."""
    cfg, prof = ctx.cfg, ctx.profile
    grid = np.linspace(cfg.max_tx_power_w / resolution, cfg.max_tx_power_w, resolution)
    # every grid point becomes a copy of client i, so one cost call covers the grid
    rep = lambda v: np.full(resolution, np.asarray(v)[i], dtype=float)
    ctx_g = RoundContext(cfg, prof, rep(ctx.gain_sq), rep(ctx.path_loss), rep(ctx.cpu_hz), rep(ctx.n_samples),
                         ctx.prev_cut, ctx.fading)
    kg = np.full(resolution, int(np.asarray(k)[i]))
    c = round_costs(ctx_g, cut, kg, grid)
    succ_now = ctx.success(k, p)
    d = ctx.n_samples
    load_others = float(np.dot(succ_now, d)) - succ_now[i] * d[i]
    server = cfg.server_cycles_per_flop * (prof.server_fp(cut) + prof.server_bp(cut)) / cfg.server_cpu_hz
    succ = 1.0 - c.s
    own = d[i] * prof.cut_gradient_bits(cut) / ctx.dn_rate[i] + cfg.client_cycles_per_flop * prof.client_bp(cut) * d[i] / ctx.cpu_hz[i]
    t3 = server * (load_others + succ * d[i]) + own * succ
    vals = np.vstack([c.t1_client, c.t2_client, t3, c.e_ms_j, c.e_up_j, c.e_cbp_expected_j])
    budget = aux.as_array()[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(budget > 0, (vals - budget) / np.where(budget > 0, budget, 1.0),
                       np.where(vals > 0, np.inf, 0.0))
    viol = np.round(np.maximum(rel, 0.0).max(axis=0), 12)
    obj = inputs.server_terms(np.where(np.arange(len(succ_now)) == i, succ[:, None], succ_now[None, :]), mode)[:, i]
    j = int(np.lexsort((grid, obj, viol))[0])
    return float(grid[j])


def iterate_power(ctx: RoundContext, cut: int, k, p0, inputs: ObjectiveInputs, objective_mode: str = "consistent",
                  bounds_mode: str | None = None, tol: float | None = None, max_iters: int | None = None,
                  init: AuxBudgets | None = None) -> PowerResult:
    """Alternate the closed-form power update with the budget refresh.

    Clients without RBs keep their previous power (it is unused).  Stops
    when the objective changes by at most ``tol`` or after ``max_iters``.
    """
    cfg = ctx.cfg
    bounds_mode = bounds_mode or cfg.power_bounds
    tol = cfg.solver_tol_power if tol is None else tol
    max_iters = cfg.max_power_iters if max_iters is None else max_iters
    k = np.asarray(k)
    on = k >= 1
    p = np.array(p0, dtype=float)
    if init is None:
        e_fp = components(ctx, cut, k, p).e_forward
        init = AuxBudgets.proportional(cfg.delay_budget_s, cfg.energy_budget_j - (e_fp[on].max() if on.any() else 0.0))
    aux = init
    _, w2, w3 = omega_coefficients(ctx, cut, k, inputs)
    prev = float(inputs.value(ctx.success(k, p), objective_mode))
    history: list[float] = []
    converged = False
    it = 0
    branch = np.array(["otherwise"] * len(k), dtype=object)
    fallback = np.zeros(len(k), dtype=bool)
    degenerate = np.zeros(len(k), dtype=bool)
    bounds = None
    while it < max_iters:
        it += 1
        bounds = power_bounds(aux, ctx, cut, k, p, bounds_mode)
        new_p, branch, degenerate = closed_form_power(bounds.lo, bounds.hi, w2, w3)
        fallback = on & bounds.empty
        # clients without RBs take their one-RB standby power so the next RB pass can admit them
        new_p = np.where(on | ~bounds.empty, new_p, p)
        for i in np.flatnonzero(fallback):
            new_p[i] = _soft_fallback(ctx, cut, k, new_p, i, aux, inputs, objective_mode)
        p = np.clip(new_p, 0.0, cfg.max_tx_power_w)
        val = float(inputs.value(ctx.success(k, p), objective_mode))
        history.append(val)
        aux = refresh_budgets(ctx, cut, k, p, aux)
        if abs(val - prev) <= tol:
            converged = True
            break
        prev = val
    res = PowerResult(p, aux, bounds, branch, it, converged, fallback, degenerate, history)
    costs = round_costs(ctx, cut, k, p)
    if costs.t_total_expected_s > cfg.delay_budget_s * (1 + 1e-9):
        res.constraint_violations.append("delay")
    if np.any(costs.e_total_expected_j > cfg.energy_budget_j * (1 + 1e-9)):
        res.constraint_violations.append("energy")
    return res
