import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asfl_bench import cost
from asfl_bench.cost import InfeasibleDecision, LayerProfile, RoundDecisions, lambda_vector, round_costs
from asfl_bench.instances import cost_instance
from asfl_bench.scenario import ScenarioConfig
from conftest import make_ctx

CFG = ScenarioConfig(fading="frozen")
UPLINK_1P5W = 8230209.486018674
DOWNLINK_5W = 55791084.314132534


def hand_profile():
    # layer 2 is 1e6 bits and layer 3 is 3e6 bits; layer 1 holds all client FP work
    return LayerProfile(size_bits=[1e5, 1e6, 3e6, 1e5, 1e5],
                        output_bits=[1e3, 1e3, 1e3, 1e3, 10.0],
                        flops_fp=[1.6e8, 1e6, 1e6, 1e6, 1e6],
                        flops_bp=[3.2e8, 2e6, 2e6, 2e6, 2e6])


def test_stage1_zero_when_cut_unchanged(ctx_factory):
    ctx = ctx_factory(CFG, profile=hand_profile(), prev_cut=2)
    t1, per = cost.stage1_delay(ctx, 2, [1], [1.5])
    assert t1 == 0.0 and np.all(per == 0)


def test_stage1_shrink_uses_uplink(ctx_factory):
    ctx = ctx_factory(CFG, profile=hand_profile(), prev_cut=2)
    t1, _ = cost.stage1_delay(ctx, 1, [1], [1.5])
    assert t1 == pytest.approx(1e6 / UPLINK_1P5W, rel=1e-12)
    assert t1 == pytest.approx(0.12150359012109974, rel=1e-12)
    assert t1 == pytest.approx(0.1215, rel=1e-3)


def test_stage1_grow_uses_downlink(ctx_factory):
    prof = LayerProfile([1e5, 2e6, 3e6, 1e5], [1e3] * 4, [1e6] * 4, [2e6] * 4)
    ctx = ctx_factory(CFG, profile=prof, prev_cut=1)
    t1, _ = cost.stage1_delay(ctx, 3, [1], [1.5])
    assert t1 == pytest.approx(5e6 / DOWNLINK_5W, rel=1e-12)
    assert t1 == pytest.approx(0.08962005419804041, rel=1e-12)


def test_shrink_without_rbs_is_infeasible(ctx_factory):
    ctx = ctx_factory(CFG, gain_sq=[1e-12, 1e-12], profile=hand_profile(), prev_cut=3)
    with pytest.raises(InfeasibleDecision):
        round_costs(ctx, 2, [1, 0], [1.5, 1.5])


def test_stage2_compute_term(ctx_factory):
    ctx = ctx_factory(CFG, profile=hand_profile(), prev_cut=1, n_samples=[64.0], cpu_hz=[1e9])
    _, per = cost.stage2_delay(ctx, 1, [1], [1.5])
    upload = 64 * 1e3 / UPLINK_1P5W
    assert per[0] - upload == pytest.approx(0.64, rel=1e-12)


def test_stage2_zero_samples(ctx_factory):
    ctx = ctx_factory(CFG, profile=hand_profile(), prev_cut=1, n_samples=[0.0])
    t2, _ = cost.stage2_delay(ctx, 1, [1], [1.5])
    assert t2 == 0.0


def test_stage3_all_lost_is_zero(ctx_factory):
    ctx = ctx_factory(CFG, gain_sq=[1e-12, 2e-12], profile=hand_profile(), prev_cut=1)
    t3, _ = cost.stage3_delay_expected(ctx, 1, [1, 1], [0.0, 0.0])
    assert t3 == 0.0


def test_stage3_hand_evaluation(ctx_factory):
    ctx = ctx_factory(CFG, gain_sq=[1e-12, 4e-12], profile=hand_profile(), prev_cut=1,
                      n_samples=[64.0, 32.0], cpu_hz=[1e9, 2e9])
    succ = np.array([1.0, 0.5])
    t3, per = cost.stage3_delay_expected(ctx, 1, [1, 1], succ)
    load = 64 + 0.5 * 32
    server = (1 / 32) * (4e6 + 8e6) * load / 1e10
    dn = [64 * 1e6 / ctx.dn_rate[0], 0.5 * 32 * 1e6 / ctx.dn_rate[1]]
    bp = [(1 / 16) * 3.2e8 * 64 / 1e9, (1 / 16) * 0.5 * 3.2e8 * 32 / 2e9]
    expected = [server + dn[0] + bp[0], server + dn[1] + bp[1]]
    np.testing.assert_allclose(per, expected, rtol=1e-12)
    assert t3 == pytest.approx(max(expected), rel=1e-12)


def test_forward_energy(ctx_factory):
    ctx = ctx_factory(CFG, profile=hand_profile(), prev_cut=1, n_samples=[64.0], cpu_hz=[1e9])
    _, e_fp, _, _ = cost.energies(ctx, 1, [1], [1.5], [1.0])
    assert e_fp[0] == pytest.approx(0.064, rel=1e-12)


def test_zero_energy_coefficient_leaves_transmit_energy(ctx_factory):
    cfg = CFG.replace(energy_coeff=0.0)
    ctx = ctx_factory(cfg, profile=hand_profile(), prev_cut=2)
    c = round_costs(ctx, 1, [2], [1.0])
    assert c.e_fp_j[0] == 0.0 and c.e_cbp_expected_j[0] == 0.0
    assert c.e_up_j[0] > 0 and c.e_ms_j[0] > 0


def test_no_migration_energy_when_growing(ctx_factory):
    ctx = ctx_factory(CFG, gain_sq=[1e-12, 3e-12], profile=hand_profile(), prev_cut=1)
    for cut in (1, 2, 3):
        assert np.all(round_costs(ctx, cut, [1, 2], [1.0, 0.5]).e_ms_j == 0)


def test_excluded_client_costs_nothing(ctx_factory):
    ctx = ctx_factory(CFG, gain_sq=[1e-12, 3e-12], profile=hand_profile(), prev_cut=1)
    c = round_costs(ctx, 2, [0, 2], [1.0, 0.5])
    assert c.s[0] == 1.0
    assert c.e_total_expected_j[0] == 0.0 and c.t2_client[0] == 0.0 and c.t3_client[0] == 0.0


def test_lambda_vector():
    assert lambda_vector(3, 5).tolist() == [1, 1, 1, 0, 0]


def test_profile_rejects_bad_shapes():
    with pytest.raises(ValueError):
        LayerProfile([1, 2], [1], [1, 2], [1, 2])
    with pytest.raises(ValueError):
        LayerProfile([1, -2], [1, 1], [1, 2], [1, 2])


def test_decision_validation():
    cfg = ScenarioConfig(n_clients=2, n_rbs=3)
    RoundDecisions(1, 1, np.array([1, 2]), np.array([1.0, 1.5])).validate(cfg)
    with pytest.raises(InfeasibleDecision):
        RoundDecisions(1, 1, np.array([2, 2]), np.array([1.0, 1.5])).validate(cfg)
    with pytest.raises(InfeasibleDecision):
        RoundDecisions(1, 1, np.array([1, 1]), np.array([1.0, 2.0])).validate(cfg)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_totals_are_sums_of_parts(seed):
    inst = cost_instance(seed)
    c = round_costs(inst.ctx, inst.cut, inst.counts, inst.p)
    assert c.t_total_expected_s == pytest.approx(c.t_stage1_s + c.t_stage2_s + c.t_stage3_expected_s, rel=1e-12)
    parts = c.e_ms_j + c.e_fp_j + c.e_up_j + c.e_cbp_expected_j
    np.testing.assert_allclose(c.e_total_expected_j, parts, rtol=1e-12)
    for v in (c.e_ms_j, c.e_fp_j, c.e_up_j, c.e_cbp_expected_j, c.s):
        assert np.all(v >= 0)
    assert min(c.t_stage1_s, c.t_stage2_s, c.t_stage3_expected_s) >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_client_compute_grows_with_cut(seed):
    # moving the cut deeper never reduces client-side forward energy or work
    inst = cost_instance(seed)
    ctx = inst.ctx
    k = np.maximum(inst.counts, 1)
    if k.sum() > ctx.cfg.n_rbs:
        return
    cuts = ctx.cfg.cuts()
    fp = [round_costs(ctx, c, k, inst.p).e_fp_j for c in cuts]
    for a, b in zip(fp, fp[1:]):
        assert np.all(b >= a - 1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tables_match_direct_costs(seed):
    inst = cost_instance(seed)
    ctx = inst.ctx
    tab = cost.client_tables(ctx, inst.cut, inst.p)
    ev = cost.evaluate_counts(tab, inst.counts[None, :])
    c = round_costs(ctx, inst.cut, inst.counts, inst.p)
    assert ev.delay[0] == pytest.approx(c.t_total_expected_s, rel=1e-10)
    np.testing.assert_allclose(ev.energy[0], c.e_total_expected_j, rtol=1e-10)


def test_frozen_context_uses_realized_gain():
    ctx = make_ctx(CFG, gain_sq=[1e-12], path_loss=[1e-9])
    assert ctx.success([1], [1.5])[0] == pytest.approx(1 - 0.0033356724660600356, rel=1e-12)
