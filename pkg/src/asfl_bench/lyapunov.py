"""Virtual queues, drift-plus-penalty, the cut search and stability checks.

Queue 0 tracks the expected round delay against its budget; queues 1..N
track each client's expected energy against the energy budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cost import InfeasibleDecision, SplitDecision


@dataclass
class VirtualQueueState:
    queues: np.ndarray
    memory: float
    penalty_weight: float
    g_history: list[np.ndarray] = field(default_factory=list)
    q_history: list[np.ndarray] = field(default_factory=list)
    t_max: float = 0.0
    e_max: float = 0.0

    @classmethod
    def zeros(cls, n_clients: int, memory: float, penalty_weight: float) -> "VirtualQueueState":
        return cls(np.zeros(n_clients + 1), memory, penalty_weight)

    def observe(self, delay, energy) -> None:
        """Fold candidate delays/energies into the running maxima."""
        d = np.asarray(delay, dtype=float)
        e = np.asarray(energy, dtype=float)
        if d.size:
            d = d[np.isfinite(d)]
            if d.size:
                self.t_max = max(self.t_max, float(d.max()))
        if e.size:
            e = e[np.isfinite(e)]
            if e.size:
                self.e_max = max(self.e_max, float(e.max()))

    def commit(self, g: np.ndarray) -> None:
        """Apply the round's constraint values and record them."""
        g = np.asarray(g, dtype=float)
        self.queues = queue_update(self.queues, g, self.memory)
        self.g_history.append(g.copy())
        self.q_history.append(self.queues.copy())


def queue_update(queues, g, memory: float) -> np.ndarray:
    """Q' = max(mu Q + (1 - mu) g, 0) elementwise."""
    return np.maximum(memory * np.asarray(queues, dtype=float) + (1.0 - memory) * np.asarray(g, dtype=float), 0.0)


def drift(queues, g, memory: float):
    """½(||Q'||² - ||Q||²); ``g`` may carry leading candidate axes."""
    q = np.asarray(queues, dtype=float)
    nxt = queue_update(q, g, memory)
    return 0.5 * ((nxt * nxt).sum(axis=-1) - float(q @ q))


def drift_plus_penalty(state: VirtualQueueState, g, g_obj_value):
    return drift(state.queues, g, state.memory) + state.penalty_weight * np.asarray(g_obj_value)


@dataclass
class SplitCandidate:
    cut: int
    g: np.ndarray
    g_obj: float
    value: float


def solve_split(state: VirtualQueueState, allowed_cuts, evaluate: Callable[[int], tuple[np.ndarray, float]],
                return_all: bool = False):
    """Exhaustive search over ``allowed_cuts`` minimizing drift-plus-penalty.

    ``evaluate(cut)`` returns the constraint vector and g_obj for that cut
    with RBs and powers held fixed, or raises :class:`InfeasibleDecision`.
    Ties go to the smallest cut.
    """
    cuts = tuple(sorted(allowed_cuts))
    if not cuts:
        raise ValueError("allowed_cuts is empty")
    best: SplitCandidate | None = None
    seen = []
    for cut in cuts:
        try:
            g, obj = evaluate(cut)
        except InfeasibleDecision:
            continue
        val = float(drift_plus_penalty(state, g, obj))
        cand = SplitCandidate(cut, np.asarray(g, dtype=float), float(obj), val)
        seen.append(cand)
        if best is None or val < best.value:
            best = cand
    if best is None:
        raise InfeasibleDecision("every cut is infeasible")
    decision = SplitDecision(best.cut, cuts)
    return (decision, best, seen) if return_all else decision


@dataclass
class StabilityReport:
    g1: float
    g2: float
    t_max: float
    e_max: float
    queue_bound_delay: float
    queue_bound_energy: float
    queue_bounds_hold: bool
    first_queue_violation: int | None
    avg_delay_violation: float
    avg_energy_violation: list[float]
    violation_bound_factor: float | None
    violation_bounds_hold: bool | None
    w_constant: float
    notes: list[str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stability_check(state: VirtualQueueState, delay_budget: float, energy_budget: float,
                    n_rounds: int | None = None, safety: float = 1.05) -> StabilityReport:
    """Check queue bounds every round and the time-averaged violation bounds.

    T_max / E_max are the running maxima over every evaluated candidate,
    inflated by ``safety``.  The performance-gap constant W is reported but
    the gap itself involves an unobservable constant and is not asserted.
    """
    mu = state.memory
    r = n_rounds if n_rounds is not None else len(state.g_history)
    t_max = state.t_max * safety
    e_max = state.e_max * safety
    gamma, delta = delay_budget, energy_budget
    g1 = max(gamma ** 2, (t_max - gamma) ** 2)
    g2 = max(delta ** 2, (e_max - delta) ** 2)
    sg1, sg2 = math.sqrt(g1), math.sqrt(g2)
    notes = [f"T_max and E_max are empirical maxima over evaluated candidates x {safety}"]
    q = np.array(state.q_history) if state.q_history else np.zeros((0, len(state.queues)))
    bad = np.flatnonzero((q[:, 0] > sg1 * (1 + 1e-12)) | np.any(q[:, 1:] > sg2 * (1 + 1e-12), axis=1)) if len(q) else []
    first = int(bad[0]) if len(bad) else None
    g = np.array(state.g_history) if state.g_history else np.zeros((0, len(state.queues)))
    avg = g.sum(axis=0) / max(r, 1) if len(g) else np.zeros(len(state.queues))
    if mu >= 1.0:
        factor = None
        holds = None
        notes.append("queue_memory = 1: violation bound undefined, check skipped")
    else:
        factor = 1.0 + 1.0 / ((1.0 - mu) * max(r, 1))
        holds = bool(avg[0] <= factor * sg1 and np.all(avg[1:] <= factor * sg2))
    n = len(state.queues) - 1
    w = 0.5 * (1 - mu) ** 2 * (g1 + n * g2) + mu * (1 - mu) * (sg1 * (t_max - gamma) + sg2 * (e_max - delta) * n)
    notes.append("performance gap bound is (W + C)/V with C unobservable; W reported only")
    return StabilityReport(g1, g2, t_max, e_max, sg1, sg2, first is None, first,
                           float(avg[0]), [float(v) for v in avg[1:]], factor, holds, float(w), notes)
