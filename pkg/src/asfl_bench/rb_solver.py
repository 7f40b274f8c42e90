"""Resource-block allocation by exhaustive search over RB count vectors.

All RBs share the bandwidth B, so every cost and objective term depends on
the allocation matrix only through each client's RB count.  The search
space is therefore the C(K + N, N) count vectors with sum <= K rather than
the (N + 1)^K assignment matrices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cost import InfeasibleDecision, RoundContext, client_tables, column_index, count_delays, gather_reduce, round_costs
from .objective import ObjectiveInputs

_TIE_RTOL = 1e-12


@lru_cache(maxsize=32)
def _count_vectors(n: int, k: int) -> np.ndarray:
    rows: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], left: int):
        if len(prefix) == n:
            rows.append(prefix)
            return
        for v in range(left + 1):
            rec(prefix + (v,), left - v)

    rec((), k)
    out = np.array(rows, dtype=np.int64).reshape(-1, n)
    out.setflags(write=False)
    return out


def count_vectors(n: int, k: int) -> np.ndarray:
    """All (k_1..k_n) with k_i >= 0 and sum <= k, in lexicographic order."""
    return _count_vectors(int(n), int(k))


def n_count_vectors(n: int, k: int) -> int:
    return math.comb(n + k, n)


@dataclass
class RbAssignment:
    counts: np.ndarray
    objective: float
    feasible: bool
    delay: float
    energy: np.ndarray
    method: str = "exact"
    max_delay_seen: float = 0.0
    max_energy_seen: float = 0.0
    top: list[tuple[tuple[int, ...], float]] = field(default_factory=list)
    powers: np.ndarray | None = None  # per-client power the chosen counts were evaluated at

    @property
    def participants(self) -> np.ndarray:
        return np.flatnonzero(self.counts >= 1)


def expand_to_matrix(counts, n_rbs: int) -> np.ndarray:
    """Canonical U: client 1 takes RBs 1..k_1, client 2 the next k_2, ..."""
    counts = np.asarray(counts, dtype=int)
    if np.any(counts < 0) or counts.sum() > n_rbs:
        raise ValueError("counts must be non-negative with sum <= n_rbs")
    u = np.zeros((len(counts), n_rbs), dtype=int)
    start = 0
    for i, c in enumerate(counts):
        u[i, start:start + c] = 1
        start += c
    return u


def powers_for(p, counts) -> np.ndarray:
    """Per-client powers for ``counts`` from a (N,) vector or (N, K + 1) table."""
    p = np.asarray(p, dtype=float)
    counts = np.asarray(counts)
    if p.ndim == 2:
        return p[np.arange(len(counts)), counts].copy()
    return np.broadcast_to(p, counts.shape).astype(float)


def _pick(obj: np.ndarray, mask: np.ndarray) -> int:
    """First (lexicographically smallest) index within tolerance of the min."""
    vals = np.where(mask, obj, np.inf)
    best = vals.min()
    tol = _TIE_RTOL * max(1.0, abs(best))
    return int(np.flatnonzero(vals <= best + tol)[0])


@lru_cache(maxsize=32)
def _columns_cached(n: int, k: int) -> np.ndarray:
    out = column_index(count_vectors(n, k), k + 1)
    out.setflags(write=False)
    return out


@dataclass
class CountScores:
    objective: np.ndarray
    delay: np.ndarray
    energy_ok: np.ndarray
    violation: np.ndarray
    max_energy: float


def score_counts(ctx: RoundContext, cut: int, p, inputs: ObjectiveInputs, counts: np.ndarray, mode: str,
                 cols: np.ndarray | None = None) -> CountScores:
    """Objective, delay and energy feasibility for every candidate vector.

    The objective and energies are separable over clients, so they are
    tabulated per (client, RB count) and gathered.
    """
    cfg = ctx.cfg
    tab = client_tables(ctx, cut, p)
    if cols is None:
        cols = column_index(counts, cfg.n_rbs + 1)
    n = ctx.n_clients
    s_tab = inputs.server_terms(tab.succ.T, mode).T
    obj = (inputs.client_term.sum() + gather_reduce(s_tab, cols, np.add)) / n
    delay = count_delays(tab, cols)
    delta, gamma = cfg.energy_budget_j, cfg.delay_budget_s
    worst_e = gather_reduce((tab.energy - delta) / delta, cols, np.maximum)
    energy_ok = worst_e <= 0.0
    with np.errstate(invalid="ignore"):
        viol = np.maximum((delay - gamma) / gamma, worst_e)
    viol = np.where(np.isnan(viol), np.inf, viol)
    fin = tab.energy[np.isfinite(tab.energy)]
    return CountScores(obj, delay, energy_ok, viol, float(fin.max(initial=0.0)))


def solve_rb(ctx: RoundContext, cut: int, p, inputs: ObjectiveInputs, mode: str = "consistent",
             top_n: int = 5) -> RbAssignment:
    """Feasible count vector minimizing g_obj at fixed cut and powers.

    Feasible means expected delay <= gamma and every client's expected
    energy <= delta.  Without a feasible vector the smallest worst relative
    violation wins.  Ties go to the lexicographically smallest vector.
    """
    cfg = ctx.cfg
    n, k = ctx.n_clients, cfg.n_rbs
    if n_count_vectors(n, k) > cfg.rb_exact_budget:
        return solve_rb_greedy(ctx, cut, p, inputs, mode)
    counts = count_vectors(n, k)
    sc = score_counts(ctx, cut, p, inputs, counts, mode, _columns_cached(n, k))
    feas = (sc.delay <= cfg.delay_budget_s) & sc.energy_ok
    if np.any(feas):
        i = _pick(sc.objective, feas)
        ok = True
    else:
        i = _pick(sc.violation, np.ones(len(sc.objective), dtype=bool))
        ok = False
    masked = np.where(feas, sc.objective, np.inf)
    order = np.argsort(masked, kind="stable")[:top_n]
    top = [(tuple(int(v) for v in counts[j]), float(sc.objective[j])) for j in order if feas[j]]
    finite_d = sc.delay[np.isfinite(sc.delay)]
    chosen = counts[i].copy()
    chosen_p = powers_for(p, chosen)
    try:
        energy = round_costs(ctx, cut, chosen, chosen_p).e_total_expected_j
    except InfeasibleDecision:
        energy = np.full(n, np.inf)
    return RbAssignment(chosen, float(sc.objective[i]), ok, float(sc.delay[i]), energy, "exact",
                        float(finite_d.max(initial=0.0)), sc.max_energy, top, chosen_p)


def solve_rb_greedy(ctx: RoundContext, cut: int, p, inputs: ObjectiveInputs, mode: str = "consistent") -> RbAssignment:
    """Add one RB at a time to the client giving the best (violation, objective)."""
    cfg = ctx.cfg
    n, k = ctx.n_clients, cfg.n_rbs
    cur = np.zeros(n, dtype=np.int64)
    sc = score_counts(ctx, cut, p, inputs, cur[None, :], mode)
    key = (max(float(sc.violation[0]), 0.0), float(sc.objective[0]))
    max_d, max_e = 0.0, 0.0
    while cur.sum() < k:
        cand = np.repeat(cur[None, :], n, axis=0) + np.eye(n, dtype=np.int64)
        sc = score_counts(ctx, cut, p, inputs, cand, mode)
        viol = np.maximum(sc.violation, 0.0)
        max_d = max(max_d, float(sc.delay[np.isfinite(sc.delay)].max(initial=0.0)))
        max_e = max(max_e, sc.max_energy)
        j = int(np.lexsort((np.arange(n), sc.objective, viol))[0])
        new_key = (float(viol[j]), float(sc.objective[j]))
        if new_key >= key:
            break
        cur, key = cand[j], new_key
    chosen_p = powers_for(p, cur)
    try:
        costs = round_costs(ctx, cut, cur, chosen_p)
    except InfeasibleDecision:
        return RbAssignment(cur, float(key[1]), False, np.inf, np.full(n, np.inf), "greedy", max_d, max_e, [], chosen_p)
    ok = bool(costs.t_total_expected_s <= cfg.delay_budget_s and np.all(costs.e_total_expected_j <= cfg.energy_budget_j))
    obj = float(inputs.value(1.0 - costs.s, mode))
    return RbAssignment(cur, obj, ok, costs.t_total_expected_s, costs.e_total_expected_j, "greedy", max_d, max_e,
                        [], chosen_p)


def random_counts(n: int, k: int, g: np.random.Generator) -> np.ndarray:
    """Uniform draw over all valid count vectors (stars and bars)."""
    # choose n positions among n + k slots; the gaps give k_1..k_n and the slack
    bars = np.sort(g.choice(n + k, size=n, replace=False))
    gaps = np.diff(np.concatenate([[-1], bars])) - 1
    return gaps.astype(np.int64)


def naive_matrices(n: int, k: int):
    """Every N x K binary matrix with at most one client per RB."""
    for owners in itertools.product(range(n + 1), repeat=k):
        u = np.zeros((n, k), dtype=int)
        for rb, o in enumerate(owners):
            if o < n:
                u[o, rb] = 1
        yield u
