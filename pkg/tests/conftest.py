import numpy as np
import pytest

from mimoprec.mse import DesignState
from mimoprec.system import ChannelSet, SystemConfig

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def unit_columns(X):
    return X / np.linalg.norm(X, axis=0)


def random_instance(rng, K_max=3, M_max=6, N_max=3):
    """Random (cfg, channels, state) with arbitrary feasible precoders and powers."""
    K = int(rng.integers(1, K_max + 1))
    M = int(rng.integers(1, M_max + 1))
    N = tuple(int(rng.integers(1, N_max + 1)) for _ in range(K))
    L = tuple(int(rng.integers(1, min(M, n) + 1)) for n in N)
    sigma2 = float(10 ** rng.uniform(-2, 1))
    cfg = SystemConfig(K, M, N, L, 1.0, sigma2)
    channels = ChannelSet(tuple(cn(rng, (M, n)) for n in N))
    Lt = sum(L)
    U = unit_columns(cn(rng, (M, Lt)))
    V = [unit_columns(cn(rng, (n, l))) for n, l in zip(N, L)]
    p = rng.dirichlet(np.ones(Lt))
    q = rng.dirichlet(np.ones(Lt))
    return cfg, channels, DesignState(U, V, p, q)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def scalar_system():
    """M = N = L = 1, H = [1], unit decoder, powers 4, noise 1."""
    cfg = SystemConfig(1, 1, (1,), (1,), 4.0, 1.0)
    channels = ChannelSet((np.array([[1.0 + 0j]]),))
    state = DesignState(np.array([[1.0 + 0j]]), [np.array([[1.0 + 0j]])],
                        np.array([4.0]), np.array([4.0]))
    return cfg, channels, state
