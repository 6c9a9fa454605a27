import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimoprec.baselines import single_user_capacity, waterfill
from mimoprec.mse import (DesignState, downlink_sinrs, sum_rate_linear,
                          uplink_mses, uplink_sinrs)
from mimoprec.pmse import (InfeasibleTargets, downlink_power_from_duality,
                           init_state, pmse_iterate, pmse_solve, pmse_value,
                           project_simplex, update_downlink_precoder,
                           uplink_power_allocation, uplink_power_from_duality)
from mimoprec.system import (ChannelSet, RngStream, SystemConfig,
                             generate_channels)

from conftest import random_instance
from oracles import simplex_grid


def orthogonal_system(g=(2.0, 0.5), P=1.0, sigma2=0.1):
    H = (np.array([[np.sqrt(g[0])], [0.0]], dtype=complex),
         np.array([[0.0], [np.sqrt(g[1])]], dtype=complex))
    cfg = SystemConfig(2, 2, (1, 1), (1, 1), P, sigma2)
    return cfg, ChannelSet(H)


def test_orthogonal_waterfilling_is_fixed_point():
    cfg, ch = orthogonal_system()
    p, _ = waterfill(np.array([2.0, 0.5]), cfg.P_max, cfg.sigma2)
    s = DesignState(np.eye(2, dtype=complex), [np.ones((1, 1), complex)] * 2, p, p.copy())
    step = pmse_iterate(s, ch, cfg)
    assert not step.events
    np.testing.assert_allclose(np.abs(step.state.U), np.eye(2), atol=1e-8)
    np.testing.assert_allclose(step.state.p, p, atol=1e-8)
    np.testing.assert_allclose(step.state.q, p, atol=1e-8)


def test_scalar_solve():
    cfg = SystemConfig(1, 1, (1,), (1,), 1.0, 1.0)
    ch = ChannelSet((np.ones((1, 1), complex),))
    s, tr = pmse_solve(cfg, ch, RngStream(0))
    assert tr.converged and tr.iterations == 1
    assert s.p[0] == pytest.approx(1.0) and s.q[0] == pytest.approx(1.0)
    assert tr.sum_rate[-1] == pytest.approx(np.log(2))


def test_duality_scalar():
    ch = ChannelSet((np.ones((1, 1), complex),))
    one = np.ones((1, 1), complex)
    p = downlink_power_from_duality(ch, one, [one], [4.0], 1.0)
    assert p[0] == pytest.approx(4.0)


def test_duality_zero_target_gets_zero_power(rng):
    cfg, ch, s = random_instance(rng, K_max=2)
    gamma = downlink_sinrs(ch, s, cfg.sigma2)
    gamma[0] = 0.0
    p = downlink_power_from_duality(ch, s.U, s.V, gamma, cfg.sigma2)
    assert p[0] == 0.0


def test_duality_infeasible_targets():
    cfg, ch = orthogonal_system()
    H = ChannelSet((np.array([[1.0], [0.0]], complex), np.array([[1.0], [0.0]], complex)))
    U = np.array([[1.0, 1.0], [0.0, 0.0]], complex)
    V = [np.ones((1, 1), complex)] * 2
    with pytest.raises(InfeasibleTargets):
        downlink_power_from_duality(H, U, V, [2.0, 2.0], 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_duality_round_trip(seed):
    # SINRs achieved on the uplink are reproduced on the downlink with equal sum power
    cfg, ch, s = random_instance(np.random.default_rng(seed))
    s.U = update_downlink_precoder(ch, s, cfg.sigma2)
    g = uplink_sinrs(ch, s, cfg.sigma2)
    s.p = downlink_power_from_duality(ch, s.U, s.V, g, cfg.sigma2)
    np.testing.assert_allclose(downlink_sinrs(ch, s, cfg.sigma2), g, rtol=1e-7, atol=1e-9)
    assert abs(s.p.sum() - s.q.sum()) < 1e-8 * max(1.0, s.q.sum())
    q = uplink_power_from_duality(ch, s.U, s.V, g, cfg.sigma2)
    np.testing.assert_allclose(q, s.q, rtol=1e-6, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0.1, 10))
def test_project_simplex(y, total):
    y = np.array(y)
    x = project_simplex(y, total)
    assert np.all(x >= 0) and x.sum() == pytest.approx(total)
    # optimality: no feasible grid point is closer
    z = np.full_like(y, total / y.size)
    assert np.linalg.norm(x - y) <= np.linalg.norm(z - y) + 1e-12


def test_power_step_refines_grid_search():
    # the subproblem is nonconvex, so start from the best grid point
    cfg = SystemConfig(2, 2, (1, 2), (1, 2), 1.0, 0.1)
    ch = generate_channels(cfg, RngStream(3))
    s = init_state(cfg, ch, RngStream(4))
    obj = lambda q: np.prod(uplink_mses(ch, s.V, q, cfg.sigma2))
    grid = min(simplex_grid(3, 1.0, 0.02), key=obj)
    q, ok = uplink_power_allocation(ch, s.V, cfg.P_max, cfg.sigma2, q0=grid)
    assert q.sum() == pytest.approx(1.0) and np.all(q >= 0)
    assert obj(q) <= obj(grid) + 1e-15
    # no neighbouring grid point improves on the result
    for g in simplex_grid(3, 1.0, 0.02):
        if np.abs(g - q).max() <= 0.03:
            assert obj(q) <= obj(g) + 1e-12


def test_power_step_never_worse_than_incumbent(rng):
    cfg, ch, s = random_instance(rng)
    q0 = s.q * cfg.P_max / s.q.sum()
    q, _ = uplink_power_allocation(ch, s.V, cfg.P_max, cfg.sigma2, q0=q0)
    assert (np.prod(uplink_mses(ch, s.V, q, cfg.sigma2))
            <= np.prod(uplink_mses(ch, s.V, q0, cfg.sigma2)) + 1e-15)


@pytest.mark.parametrize("snr", [0, 10, 20])
def test_solve_monotone_and_feasible(snr):
    cfg = SystemConfig(2, 4, (2, 2), (2, 2), 1.0, 10 ** (-snr / 10), 1e-6, 2000)
    ch = generate_channels(cfg, RngStream(snr, 1))
    s, tr = pmse_solve(cfg, ch, RngStream(snr, 2))
    assert np.all(np.diff(tr.substeps) <= 1e-12)
    assert not tr.events
    s.check(cfg.P_max, 1e-9)
    assert tr.converged
    assert tr.sum_rate[-1] == pytest.approx(sum_rate_linear(ch, s.U, s.p, cfg.sigma2, cfg.L), rel=1e-2)


def test_iteration_cap_reports_not_converged():
    cfg = SystemConfig(2, 4, (2, 2), (2, 2), 1.0, 0.01, 1e-12, 3)
    ch = generate_channels(cfg, RngStream(9))
    _, tr = pmse_solve(cfg, ch, RngStream(10))
    assert tr.iterations == 3 and not tr.converged


def test_multistart_keeps_best():
    cfg = SystemConfig(2, 4, (2, 2), (2, 2), 1.0, 0.1)
    ch = generate_channels(cfg, RngStream(1))
    _, one = pmse_solve(cfg, ch, RngStream(2), n_starts=1)
    _, three = pmse_solve(cfg, ch, RngStream(2), n_starts=3)
    assert three.objective[-1] <= one.objective[-1]


def test_pmse_value():
    assert pmse_value([1.0, 3.0]) == pytest.approx(0.125)


def test_zero_iterations_returns_initial_state():
    cfg = SystemConfig(2, 4, (2, 2), (2, 2), 1.0, 0.1, 1e-6, 0)
    ch = generate_channels(cfg, RngStream(0))
    s, tr = pmse_solve(cfg, ch, RngStream(1))
    s0 = init_state(cfg, ch, RngStream(1).child(0))
    assert not tr.converged and tr.iterations == 0
    np.testing.assert_array_equal(s.U, s0.U)


def test_init_state_uses_uniform_power():
    cfg = SystemConfig(2, 4, (2, 2), (2, 2), 2.0, 0.1)
    ch = generate_channels(cfg, RngStream(0))
    a = init_state(cfg, ch, RngStream(1))
    b = init_state(cfg, ch, RngStream(2))
    np.testing.assert_allclose(a.q, 0.5)
    np.testing.assert_allclose(np.linalg.norm(a.U, axis=0), 1.0)
    assert not np.allclose(a.U, b.U)


def test_switched_off_stream_can_return():
    # single user: the capacity-achieving design uses both eigenmodes
    cfg = SystemConfig(1, 2, (2,), (2,), 1.0, 0.1, 1e-6, 2000)
    ch = generate_channels(cfg, RngStream(105, 0))
    s, _ = pmse_solve(cfg, ch, RngStream(105, 0, (1,)).child(0, 4))
    rate = sum_rate_linear(ch, s.U, s.p, cfg.sigma2, cfg.L)
    assert rate == pytest.approx(single_user_capacity(ch.H[0], 1.0, 0.1), rel=1e-4)
