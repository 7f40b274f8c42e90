import numpy as np
import pytest

from asfl_bench.coordinator import BaselinePolicy, Simulation, initial_counts, run_bcd_round
from asfl_bench.instances import joint_instance
from asfl_bench.oracles import joint_brute_force
from asfl_bench.scenario import ScenarioConfig
from conftest import make_ctx

SMALL = ScenarioConfig(n_clients=3, n_rbs=4, layer_widths=(8, 16, 16, 16, 4), n_rounds=8, samples_per_client=60)


@pytest.mark.parametrize("text, tag", [
    ("asfl", "asfl"), ("max-power", "max-power"), ("fixed-split(2)", "fixed-split(2)"),
    ("fixed-split:3", "fixed-split(3)"), ("rand-rb", "rand-rb"),
])
def test_policy_parse(text, tag):
    assert BaselinePolicy.parse(text).tag == tag


@pytest.mark.parametrize("text", ["nope", "fixed-split", "fixed-split(x)"])
def test_policy_parse_rejects(text):
    with pytest.raises(ValueError):
        BaselinePolicy.parse(text)


def test_policy_blocks():
    assert not BaselinePolicy.parse("fixed-split(2)").optimizes_split()
    assert not BaselinePolicy.parse("rand-rb").optimizes_rbs()
    assert not BaselinePolicy.parse("max-power").optimizes_power()
    p = BaselinePolicy.parse("asfl")
    assert p.optimizes_split() and p.optimizes_rbs() and p.optimizes_power()


def test_fixed_split_cut_must_be_allowed():
    with pytest.raises(ValueError):
        Simulation(SMALL, "fixed-split(9)")


def test_initial_counts_strongest_first():
    cfg = ScenarioConfig(n_clients=3, n_rbs=2)
    ctx = make_ctx(cfg, gain_sq=[1e-12, 5e-12, 3e-12])
    assert initial_counts(ctx).tolist() == [0, 1, 1]
    cfg = ScenarioConfig(n_clients=2, n_rbs=5)
    ctx = make_ctx(cfg, gain_sq=[1e-12, 5e-12])
    assert initial_counts(ctx).tolist() == [1, 4]


@pytest.fixture(scope="module")
def runs():
    out = {}
    for policy in ("asfl", "fixed-split(2)", "max-power", "rand-power", "rand-rb"):
        sim = Simulation(SMALL, policy)
        sim.run()
        out[policy] = sim
    return out


@pytest.mark.parametrize("policy", ["asfl", "fixed-split(2)", "max-power", "rand-power", "rand-rb"])
def test_decisions_are_structurally_valid(runs, policy):
    sim = runs[policy]
    assert len(sim.records) == SMALL.n_rounds
    for rec in sim.records:
        rec.decisions.validate(SMALL)
        assert rec.bcd_iters >= 1
        assert np.all(rec.queues >= 0)
        assert np.all(rec.beta[rec.decisions.rb_counts == 0] == 0)
        assert np.isfinite(rec.g_obj_consistent) and rec.g_obj_consistent >= 0


def test_pinned_blocks_are_respected(runs):
    assert all(r.decisions.cut == 2 for r in runs["fixed-split(2)"].records)
    for r in runs["max-power"].records:
        assert np.all(r.decisions.tx_powers == SMALL.max_tx_power_w)
    sim = runs["rand-rb"]
    for r in sim.records:
        counts, _ = sim.pinned(r.round)
        if not r.reused_previous:
            assert r.decisions.rb_counts.tolist() == counts.tolist()


def test_bcd_descent_violations_rare(runs):
    recs = runs["asfl"].records
    assert sum(r.descent_violations > 0 for r in recs) <= 0.05 * len(recs) + 1


def test_simulation_is_deterministic(runs):
    again = Simulation(SMALL, "asfl")
    again.run()
    for a, b in zip(again.records, runs["asfl"].records):
        assert a.decisions.cut == b.decisions.cut
        assert np.array_equal(a.decisions.rb_counts, b.decisions.rb_counts)
        assert np.array_equal(a.decisions.tx_powers, b.decisions.tx_powers)
        assert a.g_obj_consistent == b.g_obj_consistent


def test_stability_report_from_run(runs):
    rep = runs["asfl"].stability()
    assert rep.queue_bounds_hold
    assert rep.g1 == max(SMALL.delay_budget_s ** 2, (rep.t_max - SMALL.delay_budget_s) ** 2)


@pytest.mark.parametrize("seed", [0, 3])
def test_bcd_close_to_joint_optimum(seed):
    inst = joint_instance(seed)
    res = run_bcd_round(inst.ctx, inst.inputs, inst.queues(), BaselinePolicy("asfl"), prev=inst.sim.prev)
    ref = joint_brute_force(inst.ctx, inst.inputs, power_points=60)
    assert ref is not None and res.feasible
    assert res.g_obj <= ref.g_obj * 1.05 + 1e-12
