import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asfl_bench import power_solver as ps
from asfl_bench.instances import power_instance, rb_instance
from asfl_bench.oracles import surrogate_branch, surrogate_oracle
from asfl_bench.scenario import ScenarioConfig
from conftest import make_ctx


def test_closed_form_branches():
    w2 = np.ones(4)
    crit = np.array([0.2, 0.5, 2.0, 0.0])
    w3 = -2.0 * w2 * np.exp(1.0 / np.where(crit > 0, crit, 1.0))
    w3[3] = -1.0  # ratio 0.5 <= 1: degenerate
    lo = np.full(4, 0.3)
    hi = np.full(4, 1.0)
    p, branch, degenerate = ps.closed_form_power(lo, hi, w2, w3)
    assert branch.tolist() == ["C1", "C2", "otherwise", "otherwise"]
    np.testing.assert_allclose(p, [0.3, 0.5, 1.0, 1.0], rtol=1e-12)
    assert degenerate.tolist() == [False, False, False, True]


def test_nonnegative_linear_coefficient_goes_to_upper_end():
    p, branch, degenerate = ps.closed_form_power([0.1], [1.2], [1.0], [0.5])
    assert p[0] == 1.2 and branch[0] == "otherwise" and not degenerate[0]


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 1_000_000))
def test_closed_form_matches_surrogate_grid(seed):
    inst = power_instance(seed)
    p, branch, _ = ps.closed_form_power([inst.lo], [inst.hi], [inst.w2], [inst.w3])
    grid_p, step, label = surrogate_oracle(inst.lo, inst.hi, inst.w2, inst.w3)
    assert abs(p[0] - grid_p) <= step * (1 + 1e-9)
    assert branch[0] == label == surrogate_branch(inst.lo, inst.hi, inst.w2, inst.w3)


def test_surrogate_helpers_agree():
    p, step = ps.surrogate_grid(0.2, 1.0, 1.0, -2.0 * np.exp(2.0))
    assert abs(p - 0.5) <= step


def test_omega_signs():
    inst = rb_instance(3, 4, 2)
    w1, w2, w3 = ps.omega_coefficients(inst.ctx, inst.cut, np.array([1, 2, 1]), inst.inputs)
    assert np.all(w1 >= 0) and np.all(w2 >= 0)


def _ctx():
    cfg = ScenarioConfig(n_clients=2, n_rbs=3, layer_widths=(8, 16, 16, 4), fading="frozen")
    return make_ctx(cfg, gain_sq=[1e-12, 4e-12], prev_cut=2)


@pytest.mark.parametrize("mode", ["verbatim", "exact"])
def test_bounds_widen_with_budgets(mode):
    ctx = _ctx()
    k = np.array([1, 2])
    tight = ps.AuxBudgets(0.05, 0.2, 0.2, 0.01, 0.01, 0.01)
    loose = ps.AuxBudgets(*(tight.as_array() * 4))
    a = ps.power_bounds(tight, ctx, 1, k, mode=mode)
    b = ps.power_bounds(loose, ctx, 1, k, mode=mode)
    assert np.all(b.lo <= a.lo + 1e-12)
    assert np.all(b.hi >= a.hi - 1e-12)
    assert np.all(b.hi <= ctx.cfg.max_tx_power_w)


def test_unknown_bounds_mode():
    ctx = _ctx()
    with pytest.raises(ValueError):
        ps.power_bounds(ps.AuxBudgets.proportional(1, 1), ctx, 1, [1, 1], mode="other")


def test_refresh_budgets_respect_totals():
    ctx = _ctx()
    aux = ps.refresh_budgets(ctx, 1, np.array([1, 2]), np.array([1.0, 0.7]))
    assert aux.t_migrate + aux.t_forward + aux.t_backward <= ctx.cfg.delay_budget_s * (1 + 1e-12)
    assert np.all(aux.as_array() >= 0)


def test_iterate_power_stays_in_range():
    inst = rb_instance(3, 4, 11)
    k = np.array([1, 1, 2])
    res = ps.iterate_power(inst.ctx, inst.cut, k, inst.p, inst.inputs)
    assert res.iterations >= 1
    assert np.all(res.p >= 0) and np.all(res.p <= inst.ctx.cfg.max_tx_power_w)
    assert set(res.branch) <= set(ps.BRANCHES)


def test_grid_oracle_resolution_floor():
    inst = rb_instance(2, 2, 0)
    with pytest.raises(ValueError):
        ps.grid_oracle(inst.ctx, [1, 1], inst.inputs, [0.1, 0.1], [1.0, 1.0], resolution=10)


def test_energy_caps_shape_and_meaning():
    ctx = _ctx()
    caps = ps.energy_caps(ctx, 2)
    assert caps.shape == (2, ctx.cfg.n_rbs + 1)
    assert np.all(np.isinf(caps[:, 0]))
    assert np.all(caps[:, 1:] >= 0)
