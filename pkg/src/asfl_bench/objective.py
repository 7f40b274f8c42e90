"""Per-round discrepancy objective and constraint values.

g_obj = (1/N) sum_n [ (1/iota) ||w_avg - w_n||^2 + S_n ]

over sampled client-side vectors w_n, with the server term

* consistent: S_n = ||wbar_s - (1 - s_n) w_s,n||^2
* verbatim:   S_n = (1 - s_n)^2 ||wbar_s||^2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import learner
from .learner import SplitModel
from .scenario import ScenarioConfig

MODES = ("consistent", "verbatim")


@dataclass(frozen=True)
class ObjectiveInputs:
    """Decision-independent pieces of g_obj for one cut.

    client_term: (1/iota)||w_avg - w_n||^2 per client
    server_norm_sq: ||wbar_s||^2
    server_inner: <wbar_s, w_s,n> per client
    server_self_sq: ||w_s,n||^2 per client
    """

    client_term: np.ndarray
    server_norm_sq: float
    server_inner: np.ndarray
    server_self_sq: np.ndarray
    iota: float

    @classmethod
    def from_probes(cls, probes, avg, server_vecs, iota: float, weights=None) -> "ObjectiveInputs":
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        diff = probes - np.asarray(avg, dtype=float)[None, :]
        ct = (diff * diff).sum(axis=1) / iota
        sv = np.atleast_2d(np.asarray(server_vecs, dtype=float))
        if weights is None:
            weights = np.full(sv.shape[0], 1.0 / sv.shape[0])
        wbar = np.asarray(weights) @ sv
        return cls(ct, float(wbar @ wbar), sv @ wbar, (sv * sv).sum(axis=1), iota)

    def server_terms(self, succ, mode: str = "consistent") -> np.ndarray:
        """S_n for success probabilities ``succ`` = 1 - s (any broadcastable shape)."""
        succ = np.asarray(succ, dtype=float)
        if mode == "consistent":
            return self.server_norm_sq - 2.0 * succ * self.server_inner + succ * succ * self.server_self_sq
        if mode == "verbatim":
            return succ * succ * self.server_norm_sq
        raise ValueError(f"unknown objective mode {mode!r}")

    def value(self, succ, mode: str = "consistent"):
        """g_obj; ``succ`` may carry leading candidate axes, clients last."""
        terms = self.client_term + self.server_terms(succ, mode)
        return terms.mean(axis=-1)


def g_obj(inputs: ObjectiveInputs, s, mode: str = "consistent"):
    """Objective value for packet error rates ``s`` (s = 1 for excluded clients)."""
    return inputs.value(1.0 - np.asarray(s, dtype=float), mode)


def objective_inputs(model: SplitModel, cfg: ScenarioConfig, round_idx: int, cut: int) -> ObjectiveInputs:
    """Probe the model as it would be split at ``cut`` this round."""
    n_c = learner.n_params(model.widths, 0, cut)
    idx = learner.probe_indices(cfg, n_c, round_idx, cut)
    probes, avg = learner.sample_discrepancy_probe(model, cfg.sampling_ratio, indices=idx, cut=cut)
    server = np.stack([learner.flatten(model.server_side(n, cut)) for n in range(model.n_clients)])
    weights = model.n_samples / model.n_samples.sum()
    return ObjectiveInputs.from_probes(probes, avg, server, cfg.sampling_ratio, weights)


def g_constraints(t_total: float, energy, cfg: ScenarioConfig) -> np.ndarray:
    """(g_0, g_1..g_N): expected delay minus budget, energies minus budget."""
    return np.concatenate([[t_total - cfg.delay_budget_s], np.asarray(energy, dtype=float) - cfg.energy_budget_j])
