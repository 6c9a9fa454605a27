"""System configuration, channel containers and seeded channel generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConfigError", "SystemConfig", "ChannelSet", "RngStream",
           "validate_config", "generate_channels", "snr_to_noise"]


class ConfigError(ValueError):
    """Raised when a system configuration violates one of its invariants."""


@dataclass(frozen=True)
class SystemConfig:
    K: int
    M: int
    N: tuple
    L: tuple
    P_max: float = 1.0
    sigma2: float = 0.1
    epsilon: float = 1e-6
    max_iters: int = 500

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        object.__setattr__(self, "L", tuple(int(n) for n in self.L))

    @property
    def total_rx(self) -> int:
        return sum(self.N)

    @property
    def total_streams(self) -> int:
        return sum(self.L)

    def with_noise(self, sigma2: float) -> "SystemConfig":
        return SystemConfig(self.K, self.M, self.N, self.L, self.P_max, sigma2,
                            self.epsilon, self.max_iters)

    def with_streams(self, L) -> "SystemConfig":
        return SystemConfig(self.K, self.M, self.N, tuple(L), self.P_max,
                            self.sigma2, self.epsilon, self.max_iters)


def validate_config(cfg: SystemConfig) -> None:
    """Check every invariant of `cfg`, raising `ConfigError` on the first
    violation found."""
    if cfg.K < 1:
        raise ConfigError("K must be >= 1")
    if cfg.M < 1:
        raise ConfigError("M must be >= 1")
    if len(cfg.N) != cfg.K:
        raise ConfigError(f"N has {len(cfg.N)} entries, expected K={cfg.K}")
    if len(cfg.L) != cfg.K:
        raise ConfigError(f"L has {len(cfg.L)} entries, expected K={cfg.K}")
    for k, (n, l) in enumerate(zip(cfg.N, cfg.L)):
        if n < 1:
            raise ConfigError(f"N[{k}]={n} must be >= 1")
        if not 1 <= l <= min(cfg.M, n):
            raise ConfigError(
                f"L[{k}]={l} violates 1 <= L_k <= min(M, N_k)={min(cfg.M, n)}")
    if not cfg.P_max > 0:
        raise ConfigError("non-positive power budget P_max")
    if not cfg.sigma2 > 0:
        raise ConfigError("non-positive noise variance sigma2")
    if not cfg.epsilon > 0:
        raise ConfigError("non-positive convergence threshold epsilon")
    if cfg.max_iters < 0:
        raise ConfigError("max_iters must be >= 0")


def snr_to_noise(snr_db: float, P_max: float = 1.0) -> float:
    """Noise variance giving SNR = 10 log10(P_max / sigma2)."""
    return P_max * 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channels `H[k]` of shape (M, N_k); user k sees `H[k].conj().T`."""
    H: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(h, dtype=complex) for h in self.H)
        if not mats:
            raise ConfigError("empty channel set")
        M = mats[0].shape[0]
        for k, h in enumerate(mats):
            if h.ndim != 2 or h.shape[0] != M:
                raise ConfigError(f"channel {k} has shape {h.shape}, expected ({M}, N_k)")
            if not np.all(np.isfinite(h)):
                raise ConfigError(f"channel {k} has non-finite entries")
            h.flags.writeable = False
        object.__setattr__(self, "H", mats)

    @property
    def K(self) -> int:
        return len(self.H)

    @property
    def M(self) -> int:
        return self.H[0].shape[0]

    @property
    def N(self) -> tuple:
        return tuple(h.shape[1] for h in self.H)

    @property
    def stacked(self) -> np.ndarray:
        """Concatenation [H_1, ..., H_K] of shape (M, N)."""
        return np.hstack(self.H)

    def check(self, cfg: SystemConfig) -> None:
        if self.M != cfg.M or self.N != cfg.N:
            raise ConfigError(
                f"channel shapes M={self.M}, N={self.N} do not match config "
                f"M={cfg.M}, N={cfg.N}")


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (seed, index).

    Sub-streams for distinct purposes are derived with `child`, so that
    the numbers a trial consumes never depend on scheduling order.
    """
    seed: int
    index: int = 0
    path: tuple = field(default=())

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.index, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1),
                                    spawn_key=(self.index,) + self.path)
        return np.random.default_rng(ss)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples: (a + ib)/sqrt(2) with a, b standard normal."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channels(cfg: SystemConfig, rng: RngStream) -> ChannelSet:
    """Draw i.i.d. Rayleigh channels for every user."""
    gen = rng.generator()
    return ChannelSet(tuple(complex_normal(gen, (cfg.M, n)) for n in cfg.N))
