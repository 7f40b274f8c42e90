"""Round loop: block coordinate descent over (cut, RBs, powers), execution of
the three training stages, queue updates, and the ablation baselines."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import learner, lyapunov, objective, power_solver, rb_solver
from .cost import InfeasibleDecision, LayerProfile, RoundContext, RoundCosts, RoundDecisions, round_costs
from .lyapunov import VirtualQueueState
from .objective import ObjectiveInputs
from .scenario import TAG_BASELINE, ScenarioConfig, draw_environment, make_dataset, partition_data, rng

POLICIES = ("asfl", "fixed-split", "max-power", "rand-power", "rand-rb")


@dataclass(frozen=True)
class BaselinePolicy:
    variant: str = "asfl"
    cut: int | None = None

    def __post_init__(self):
        if self.variant not in POLICIES:
            raise ValueError(f"unknown policy {self.variant!r}")
        if (self.variant == "fixed-split") != (self.cut is not None):
            raise ValueError("fixed-split needs a cut and only fixed-split takes one")

    @classmethod
    def parse(cls, text: str) -> "BaselinePolicy":
        """'asfl', 'max-power', 'rand-power', 'rand-rb', 'fixed-split(2)' or 'fixed-split:2'."""
        t = text.strip()
        if t.startswith("fixed-split"):
            arg = t[len("fixed-split"):].strip("():= ")
            if not arg.isdigit():
                raise ValueError(f"fixed-split needs a cut, got {text!r}")
            return cls("fixed-split", int(arg))
        return cls(t)

    @property
    def tag(self) -> str:
        return f"fixed-split({self.cut})" if self.variant == "fixed-split" else self.variant

    def optimizes_split(self) -> bool:
        return self.variant != "fixed-split"

    def optimizes_rbs(self) -> bool:
        return self.variant != "rand-rb"

    def optimizes_power(self) -> bool:
        return self.variant not in ("max-power", "rand-power")


@dataclass
class BcdResult:
    decisions: RoundDecisions
    costs: RoundCosts
    g_obj: float
    iterations: int
    descent_violations: int
    feasible: bool
    reused_previous: bool
    power_fallbacks: int
    power_kept: int
    timings: dict[str, float]
    history: list[float]


@dataclass
class RoundRecord:
    round: int
    decisions: RoundDecisions
    costs: RoundCosts
    g_obj_verbatim: float
    g_obj_consistent: float
    queues: np.ndarray
    beta: np.ndarray
    bcd_iters: int
    descent_violations: int
    feasible: bool
    reused_previous: bool
    train_loss: float
    train_acc: float
    timings: dict[str, float] = field(default_factory=dict)


def initial_counts(ctx: RoundContext) -> np.ndarray:
    """One RB each to the K strongest channels (ties by index)."""
    n, k = ctx.n_clients, ctx.cfg.n_rbs
    order = np.lexsort((np.arange(n), -ctx.gain_sq))
    counts = np.zeros(n, dtype=np.int64)
    counts[order[:min(k, n)]] = 1
    if k > n:
        counts[order[0]] += k - n
    return counts


def _feasible(costs: RoundCosts, cfg: ScenarioConfig) -> bool:
    return bool(costs.t_total_expected_s <= cfg.delay_budget_s * (1 + 1e-9)
                and np.all(costs.e_total_expected_j <= cfg.energy_budget_j * (1 + 1e-9)))


def _worse_than_incumbent(ctx: RoundContext, inputs: ObjectiveInputs, cut: int, k, p_old, p_new, mode: str) -> bool:
    """True when the new powers raise g_obj while the old ones still meet the budgets."""
    try:
        old = round_costs(ctx, cut, k, p_old)
    except InfeasibleDecision:
        return False
    if not _feasible(old, ctx.cfg):
        return False
    new = round_costs(ctx, cut, k, p_new)
    return float(inputs.value(1.0 - new.s, mode)) > float(inputs.value(1.0 - old.s, mode))


class InputsCache:
    """Objective inputs per candidate cut for the current model state."""

    def __init__(self, model: learner.SplitModel, cfg: ScenarioConfig, round_idx: int):
        self.model, self.cfg, self.round = model, cfg, round_idx
        self._cache: dict[int, ObjectiveInputs] = {}

    def __call__(self, cut: int) -> ObjectiveInputs:
        if cut not in self._cache:
            self._cache[cut] = objective.objective_inputs(self.model, self.cfg, self.round, cut)
        return self._cache[cut]


def run_bcd_round(ctx: RoundContext, inputs: InputsCache, queues: VirtualQueueState, policy: BaselinePolicy,
                  pinned_counts=None, pinned_power=None, prev: RoundDecisions | None = None,
                  mode: str | None = None) -> BcdResult:
    """Alternate split, RB and power blocks until g_obj settles.

    Blocks a policy does not optimize stay at their pinned values.
    """
    cfg = ctx.cfg
    mode = mode or cfg.objective_mode
    cuts = cfg.cuts() if policy.optimizes_split() else (policy.cut,)
    cut = policy.cut if policy.variant == "fixed-split" else ctx.prev_cut
    k = np.array(pinned_counts if pinned_counts is not None else initial_counts(ctx), dtype=np.int64)
    if pinned_power is not None:
        p = np.array(pinned_power, dtype=float)
    else:
        p = np.full(ctx.n_clients, cfg.max_tx_power_w)
    timings = {"split": 0.0, "rb": 0.0, "power": 0.0}
    history: list[float] = []
    prev_val = None
    iters = 0
    violations = 0
    fallbacks = 0
    kept = 0
    rb_ok = True

    def evaluate(c: int):
        costs = round_costs(ctx, c, k, p)
        queues.observe(costs.t_total_expected_s, costs.e_total_expected_j)
        g = objective.g_constraints(costs.t_total_expected_s, costs.e_total_expected_j, cfg)
        return g, float(inputs(c).value(1.0 - costs.s, mode))

    while iters < cfg.max_outer_iters:
        iters += 1
        t0 = time.perf_counter()
        if len(cuts) > 1 or cut not in cuts:
            try:
                cut = lyapunov.solve_split(queues, cuts, evaluate).cut
            except InfeasibleDecision:
                # staying put never migrates, so it is always executable
                cut = ctx.prev_cut
        t1 = time.perf_counter()
        if policy.optimizes_rbs():
            p_rb = p
            if policy.optimizes_power() and cfg.rb_power_caps:
                # evaluate each count at the power that keeps the client inside its energy budget
                p_rb = np.minimum(p[:, None], power_solver.energy_caps(ctx, cut))
            ra = rb_solver.solve_rb(ctx, cut, p_rb, inputs(cut), mode)
            queues.observe(ra.max_delay_seen, ra.max_energy_seen)
            k = ra.counts
            p = np.where(k >= 1, ra.powers, p)
            rb_ok = ra.feasible
        t2 = time.perf_counter()
        if policy.optimizes_power():
            pr = power_solver.iterate_power(ctx, cut, k, p, inputs(cut), mode)
            fallbacks += int(pr.fallback.sum())
            if cfg.power_safeguard and _worse_than_incumbent(ctx, inputs(cut), cut, k, p, pr.p, mode):
                # participants keep their powers; standby powers are still refreshed
                kept += 1
                p = np.where(k >= 1, p, pr.p)
            else:
                p = pr.p
        t3 = time.perf_counter()
        timings["split"] += t1 - t0
        timings["rb"] += t2 - t1
        timings["power"] += t3 - t2
        costs = round_costs(ctx, cut, k, p)
        queues.observe(costs.t_total_expected_s, costs.e_total_expected_j)
        val = float(inputs(cut).value(1.0 - costs.s, mode))
        history.append(val)
        if prev_val is not None and val > prev_val * (1 + 1e-9) + 1e-12:
            violations += 1
        if prev_val is not None and abs(val - prev_val) <= cfg.solver_tol_outer:
            break
        prev_val = val
    dec = RoundDecisions(cut, ctx.prev_cut, k.copy(), p.copy())
    costs = round_costs(ctx, cut, k, p)
    ok = _feasible(costs, cfg) and rb_ok
    reused = False
    if not ok and prev is not None and prev.cut == ctx.prev_cut:
        try:
            old = round_costs(ctx, prev.cut, prev.rb_counts, prev.tx_powers)
        except InfeasibleDecision:
            old = None
        if old is not None and _feasible(old, cfg):
            dec = RoundDecisions(prev.cut, ctx.prev_cut, prev.rb_counts.copy(), prev.tx_powers.copy())
            costs = old
            reused = True
    g_val = float(inputs(dec.cut).value(1.0 - costs.s, mode))
    dec.validate(cfg)
    return BcdResult(dec, costs, g_val, iters, violations, ok, reused, fallbacks, kept, timings, history)


class Simulation:
    """A full run of one policy: data, model, queues and the round loop."""

    def __init__(self, cfg: ScenarioConfig, policy: BaselinePolicy | str = "asfl"):
        self.cfg = cfg
        self.policy = BaselinePolicy.parse(policy) if isinstance(policy, str) else policy
        if self.policy.variant == "fixed-split" and self.policy.cut not in cfg.cuts():
            raise ValueError(f"fixed-split cut {self.policy.cut} not in allowed cuts {cfg.cuts()}")
        self.profile = LayerProfile.from_config(cfg)
        n_total = cfg.n_clients * cfg.samples_per_client
        self.x, self.y = make_dataset(cfg, n_total, split=0)
        self.parts = partition_data(cfg, self.y)
        start = self.policy.cut if self.policy.variant == "fixed-split" else cfg.initial_cut
        self.model = learner.SplitModel.create(cfg, start)
        self.queues = VirtualQueueState.zeros(cfg.n_clients, cfg.queue_memory, cfg.penalty_weight)
        self.prev: RoundDecisions | None = None
        self.records: list[RoundRecord] = []
        self.snapshot_dir: str | None = None

    def pinned(self, round_idx: int):
        cfg = self.cfg
        g = rng(cfg.seeds.env, "env", TAG_BASELINE, round_idx)
        counts = None
        power = None
        u = g.random(cfg.n_clients)
        if self.policy.variant == "rand-power":
            power = cfg.max_tx_power_w * (1.0 - u)
        if self.policy.variant == "max-power":
            power = np.full(cfg.n_clients, cfg.max_tx_power_w)
        if self.policy.variant == "rand-rb":
            counts = rb_solver.random_counts(cfg.n_clients, cfg.n_rbs, g)
        return counts, power

    def context(self, round_idx: int) -> RoundContext:
        draws, clients = draw_environment(self.cfg, round_idx)
        return RoundContext.from_environment(self.cfg, self.profile, draws, clients, self.model.cut)

    def step(self, round_idx: int) -> RoundRecord:
        cfg = self.cfg
        ctx = self.context(round_idx)
        inputs = InputsCache(self.model, cfg, round_idx)
        counts, power = self.pinned(round_idx)
        res = run_bcd_round(ctx, inputs, self.queues, self.policy, counts, power, self.prev)
        dec, costs = res.decisions, res.costs
        cut_inputs = inputs(dec.cut)
        succ = 1.0 - costs.s
        g_verb = float(cut_inputs.value(succ, "verbatim"))
        g_cons = float(cut_inputs.value(succ, "consistent"))
        # stages 1-3 on the model
        model = learner.migrate_cut(self.model, dec.cut)
        beta = learner.draw_beta(cfg, round_idx, dec.rb_counts, succ)
        batches = learner.draw_batches(cfg, round_idx, self.x, self.y, self.parts)
        loss, acc = _batch_metrics(model, batches)
        self.model, _ = learner.train_round(model, beta, batches, cfg.learning_rate)
        g = objective.g_constraints(costs.t_total_expected_s, costs.e_total_expected_j, cfg)
        self.queues.commit(g)
        self.prev = dec
        rec = RoundRecord(round_idx, dec, costs, g_verb, g_cons, self.queues.queues.copy(), beta, res.iterations,
                          res.descent_violations, res.feasible, res.reused_previous, loss, acc, res.timings)
        self.records.append(rec)
        if cfg.snapshot_every and self.snapshot_dir and (round_idx + 1) % cfg.snapshot_every == 0:
            learner.write_snapshot(f"{self.snapshot_dir}/weights_{round_idx + 1:05d}.bin", self.model, round_idx + 1)
        return rec

    def run(self, rounds: int | None = None, callback=None) -> list[RoundRecord]:
        total = self.cfg.n_rounds if rounds is None else rounds
        for r in range(len(self.records), total):
            rec = self.step(r)
            if callback is not None:
                callback(rec)
        return self.records

    def stability(self) -> lyapunov.StabilityReport:
        return lyapunov.stability_check(self.queues, self.cfg.delay_budget_s, self.cfg.energy_budget_j,
                                        len(self.records), self.cfg.stability_safety)


def _batch_metrics(model: learner.SplitModel, batches) -> tuple[float, float]:
    """Mean batch loss and accuracy of every client's full model before the step."""
    losses, correct, seen = [], 0, 0
    for n, (x, y) in enumerate(batches):
        out, _ = learner.forward(model.clients[n], x, last_is_output=True)
        value, _, logp = learner.softmax_xent(out, y)
        losses.append(value)
        correct += int((logp.argmax(axis=1) == y).sum())
        seen += len(y)
    return float(np.mean(losses)), correct / max(seen, 1)


def execute_round(sim: Simulation, round_idx: int) -> RoundRecord:
    return sim.step(round_idx)
