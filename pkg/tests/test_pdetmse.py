import numpy as np
import pytest

from mimoprec.mse import pdetmse_objective, sum_rate_linear
from mimoprec.pdetmse import (joint_gradient, joint_objective,
                              numeric_gradient_check, pdetmse_solve,
                              state_from_joint)
from mimoprec.baselines import single_user_capacity
from mimoprec.system import RngStream, SystemConfig, generate_channels

from conftest import cn


def point(seed, K=2, M=4, N=2):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(K, M, (N,) * K, (N,) * K, 1.0, 0.1)
    ch = generate_channels(cfg, RngStream(seed))
    G = cn(rng, (M, cfg.total_streams))
    return cfg, ch, G * np.sqrt(cfg.P_max) / np.linalg.norm(G)


def test_objective_matches_mse_core():
    cfg, ch, G = point(0)
    s = state_from_joint(G, ch, cfg.sigma2, cfg.L)
    assert joint_objective(G, ch, cfg.sigma2, cfg.L) == pytest.approx(
        pdetmse_objective(ch, s.U, s.p, cfg.sigma2, cfg.L), abs=1e-10)
    np.testing.assert_allclose(s.p, np.linalg.norm(G, axis=0) ** 2)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    cfg, ch, G = point(seed, K=3, M=5)
    assert numeric_gradient_check(G, ch, cfg.sigma2, cfg.L) < 1e-5


def test_gradient_is_descent_direction():
    cfg, ch, G = point(7)
    d = joint_gradient(G, ch, cfg.sigma2, cfg.L)
    f0 = joint_objective(G, ch, cfg.sigma2, cfg.L)
    assert joint_objective(G - 1e-4 * d, ch, cfg.sigma2, cfg.L) < f0


def test_zero_column_recovery():
    cfg, ch, G = point(3)
    G[:, 1] = 0
    s = state_from_joint(G, ch, cfg.sigma2, cfg.L, rng=np.random.default_rng(0))
    assert s.p[1] == 0 and np.linalg.norm(s.U[:, 1]) == pytest.approx(1.0)


def test_solve_reports_info_and_power():
    cfg = SystemConfig(2, 4, (2, 2), (2, 2), 1.0, 0.1)
    ch = generate_channels(cfg, RngStream(12))
    s, f, info = pdetmse_solve(cfg, ch, RngStream(13), return_info=True)
    assert s.p.sum() == pytest.approx(cfg.P_max, rel=1e-9)
    assert f == pytest.approx(-sum_rate_linear(ch, s.U, s.p, cfg.sigma2, cfg.L), abs=1e-9)
    assert info["starts"] >= 4 and info["failures"] == 0


def test_single_user_reaches_capacity():
    cfg = SystemConfig(1, 2, (2,), (2,), 1.0, 0.1)
    ch = generate_channels(cfg, RngStream(4))
    _, f = pdetmse_solve(cfg, ch, RngStream(5))
    cap = single_user_capacity(ch.H[0], 1.0, 0.1)
    assert -f == pytest.approx(cap, rel=1e-6)


def test_rejects_zero_starts():
    cfg = SystemConfig(1, 2, (2,), (2,), 1.0, 0.1)
    with pytest.raises(ValueError):
        pdetmse_solve(cfg, generate_channels(cfg, RngStream(0)), RngStream(1), n_starts=0)
