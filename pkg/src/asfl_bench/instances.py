"""Seeded random problem instances for the differential oracle checks.

Each generator is a pure function of its seed so a failing instance can be
replayed from the command line.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .coordinator import InputsCache, Simulation
from .cost import LayerProfile, RoundContext
from .lyapunov import VirtualQueueState
from .objective import ObjectiveInputs
from .scenario import ScenarioConfig, Seeds, draw_environment

TOY_WIDTHS = (8, 16, 16, 4)


@dataclass
class RbInstance:
    ctx: RoundContext
    cut: int
    p: np.ndarray
    inputs: ObjectiveInputs


def random_inputs(n: int, g: np.random.Generator, dim: int = 6) -> ObjectiveInputs:
    """Objective inputs from random client and server vectors."""
    probes = g.normal(size=(n, dim))
    server = g.normal(loc=g.normal(size=dim), scale=g.uniform(0.1, 1.0), size=(n, dim))
    return ObjectiveInputs.from_probes(probes, probes.mean(axis=0), server, iota=g.uniform(0.05, 1.0))


def rb_instance(n: int, k: int, seed: int) -> RbInstance:
    """Random cost profile: budgets, geometry, scales, previous cut and powers."""
    g = np.random.default_rng([seed, 7001])
    cfg = ScenarioConfig(
        n_clients=n, n_rbs=k, layer_widths=TOY_WIDTHS,
        coverage_radius_m=float(g.uniform(100, 1500)),
        delay_budget_s=float(10 ** g.uniform(-1.5, 1.5)),
        energy_budget_j=float(10 ** g.uniform(-2.5, 0)),
        flops_scale=float(10 ** g.uniform(1, 4)),
        bits_scale=float(10 ** g.uniform(0, 2)),
        waterfall_threshold=float(10 ** g.uniform(-1, 1.5)),
        seeds=Seeds(seed, seed, seed, seed),
    )
    prev = int(g.integers(1, cfg.n_layers))
    draws, clients = draw_environment(cfg, 0)
    ctx = RoundContext.from_environment(cfg, LayerProfile.from_config(cfg), draws, clients, prev)
    cut = int(g.choice(cfg.cuts()))
    p = cfg.max_tx_power_w * g.uniform(0.01, 1.0, size=n)
    return RbInstance(ctx, cut, p, random_inputs(n, g))


@dataclass
class SplitInstance:
    ctx: RoundContext
    queues: VirtualQueueState
    counts: np.ndarray
    p: np.ndarray
    inputs: InputsCache


def split_instance(n_layers: int, seed: int, n_clients: int = 3) -> SplitInstance:
    """Random queues, budgets, previous cut and decisions on a model with ``n_layers`` layers."""
    g = np.random.default_rng([seed, 7002])
    widths = tuple(int(v) for v in g.integers(2, 12, size=n_layers + 1))
    cfg = ScenarioConfig(
        n_clients=n_clients, n_rbs=n_clients + 1, layer_widths=widths,
        delay_budget_s=float(10 ** g.uniform(-1, 1.5)),
        energy_budget_j=float(10 ** g.uniform(-2, 0)),
        flops_scale=float(10 ** g.uniform(1, 4)),
        queue_memory=float(g.uniform(0, 1)),
        penalty_weight=float(10 ** g.uniform(-1, 2)),
        samples_per_client=60,
        seeds=Seeds(seed, seed, seed, seed),
    )
    sim = Simulation(cfg, "asfl")
    prev = int(g.integers(1, n_layers))
    draws, clients = draw_environment(cfg, 0)
    ctx = RoundContext.from_environment(cfg, sim.profile, draws, clients, prev)
    queues = VirtualQueueState(g.exponential(scale=g.uniform(0.1, 5.0), size=n_clients + 1),
                               cfg.queue_memory, cfg.penalty_weight)
    counts = g.integers(0 if g.random() < 0.5 else 1, 3, size=n_clients)
    while counts.sum() > cfg.n_rbs:
        counts[int(np.argmax(counts))] -= 1
    p = cfg.max_tx_power_w * g.uniform(0.05, 1.0, size=n_clients)
    return SplitInstance(ctx, queues, counts, p, InputsCache(sim.model, cfg, 0))


@dataclass
class PowerInstance:
    lo: float
    hi: float
    w2: float
    w3: float


def power_instance(seed: int) -> PowerInstance:
    """Surrogate coefficients whose critical point lands below, inside or above [lo, hi]."""
    g = np.random.default_rng([seed, 7003])
    lo = float(10 ** g.uniform(-2, 0))
    hi = float(lo + 10 ** g.uniform(-2, 0.3))
    w2 = float(10 ** g.uniform(-3, 2))
    region = int(g.integers(0, 4))
    if region == 0:
        crit = lo * g.uniform(0.2, 0.99)  # below lo
    elif region == 1:
        crit = g.uniform(lo, hi)  # inside
    elif region == 2:
        crit = hi * g.uniform(1.01, 5.0)  # above hi
    else:
        return PowerInstance(lo, hi, w2, -float(g.uniform(0.1, 2.0)) * w2)  # ratio <= 1
    ratio = float(np.exp(1.0 / crit))
    return PowerInstance(lo, hi, w2, -2.0 * w2 * ratio)


@dataclass
class JointInstance:
    sim: Simulation
    round: int
    ctx: RoundContext
    inputs: InputsCache

    def queues(self) -> VirtualQueueState:
        return copy.deepcopy(self.sim.queues)


def joint_instance(seed: int) -> JointInstance:
    """Toy network (3 layers, 2 clients, 2 RBs) advanced ``seed % 5`` rounds.

    Defaults otherwise, with the energy budget drawn from U(0.05, 0.5) J so
    the budget binds on part of the instances.
    """
    g = np.random.default_rng(1000 + seed)
    cfg = ScenarioConfig(n_clients=2, n_rbs=2, layer_widths=TOY_WIDTHS, n_rounds=10,
                         energy_budget_j=float(g.uniform(0.05, 0.5)), seeds=Seeds(seed, seed, seed, seed))
    sim = Simulation(cfg, "asfl")
    r = seed % 5
    sim.run(r)
    return JointInstance(sim, r, sim.context(r), InputsCache(sim.model, cfg, r))


@dataclass
class CostInstance:
    ctx: RoundContext
    cut: int
    counts: np.ndarray
    p: np.ndarray


def cost_instance(seed: int) -> CostInstance:
    """Random frozen-fading round with a valid decision (shrinks give every client an RB)."""
    g = np.random.default_rng([seed, 7004])
    n = int(g.integers(2, 7))
    k_total = int(g.integers(n, 2 * n + 1))
    cfg = ScenarioConfig(
        n_clients=n, n_rbs=k_total, layer_widths=TOY_WIDTHS, fading="frozen",
        coverage_radius_m=float(g.uniform(100, 1500)),
        flops_scale=float(10 ** g.uniform(1, 4)),
        bits_scale=float(10 ** g.uniform(0, 2)),
        waterfall_threshold=float(10 ** g.uniform(-1, 2)),
        samples_per_client=int(g.integers(20, 500)),
        seeds=Seeds(seed, seed, seed, seed),
    )
    prev = int(g.integers(1, cfg.n_layers))
    draws, clients = draw_environment(cfg, int(g.integers(0, 50)))
    ctx = RoundContext.from_environment(cfg, LayerProfile.from_config(cfg), draws, clients, prev)
    cut = int(g.choice(cfg.cuts()))
    lo = 1 if cut < prev else 0
    counts = np.zeros(n, dtype=np.int64)
    while True:
        counts = g.integers(lo, 3, size=n)
        if counts.sum() <= k_total and counts.any():
            break
    p = cfg.max_tx_power_w * g.uniform(0.01, 1.0, size=n)
    return CostInstance(ctx, cut, counts, p)
