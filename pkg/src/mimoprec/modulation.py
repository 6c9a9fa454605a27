"""Adaptive M-PSK bit loading against a BER target and Monte-Carlo BER
measurement over a designed downlink."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .system import complex_normal

__all__ = ["BerModelConstants", "ModulationPlan", "BerReport",
           "ber_psk_approx", "ber_bpsk_exact", "model_ber", "naive_bits",
           "upgrade_probability", "probabilistic_bits", "plan_modulation",
           "simulate_ber", "gray", "MAX_BITS"]

MAX_BITS = 10


@dataclass(frozen=True)
class BerModelConstants:
    c1: float = 0.25
    c2: float = 8.0
    c3: float = 1.94
    c4: float = 0.0


DEFAULT_CONSTANTS = BerModelConstants()


def ber_psk_approx(gamma, b, constants=DEFAULT_CONSTANTS):
    """c1 exp(-c2 gamma / (2^(c3 b) - c4)); valid for b >= 2."""
    if np.any(np.asarray(b) < 2):
        raise ValueError("PSK approximation needs b >= 2; use ber_bpsk_exact")
    c = constants
    return c.c1 * np.exp(-c.c2 * np.asarray(gamma, float) / (2.0 ** (c.c3 * np.asarray(b)) - c.c4))


def ber_bpsk_exact(gamma):
    return 0.5 * erfc(np.sqrt(np.asarray(gamma, float)))


def model_ber(gamma, b, constants=DEFAULT_CONSTANTS):
    """Model BER for b bits per symbol (b = 0 means the stream is idle)."""
    if b <= 0:
        return 0.0
    if b == 1:
        return float(ber_bpsk_exact(gamma))
    return float(ber_psk_approx(gamma, b, constants))


def naive_bits(gamma, beta, constants=DEFAULT_CONSTANTS, powered=True):
    """Largest b <= MAX_BITS whose model BER meets ``beta``.

    A powered stream that cannot meet the target even with BPSK still
    transmits BPSK; an unpowered stream gets 0 bits.
    """
    if not powered:
        return 0
    for b in range(MAX_BITS, 0, -1):
        if model_ber(gamma, b, constants) <= beta:
            return b
    return 1


def upgrade_probability(gamma, beta, b, constants=DEFAULT_CONSTANTS):
    """Probability of sending b+1 instead of b bits so the mean model BER
    equals ``beta``; clipped to [0, 1]."""
    if b <= 0 or b >= MAX_BITS:
        return 0.0
    lo = model_ber(gamma, b, constants)
    hi = model_ber(gamma, b + 1, constants)
    if hi <= lo:
        return 0.0
    return float(np.clip((beta - lo) / (hi - lo), 0.0, 1.0))


def probabilistic_bits(gamma, beta, constants=DEFAULT_CONSTANTS, rng=None, powered=True):
    """Draw b or b+1 bits, with b from :func:`naive_bits`."""
    b = naive_bits(gamma, beta, constants, powered)
    p = upgrade_probability(gamma, beta, b, constants)
    rng = rng if rng is not None else np.random.default_rng()
    return b + 1 if rng.random() < p else b


@dataclass
class ModulationPlan:
    bits: np.ndarray           # naive bit depth per stream
    target: np.ndarray         # BER target per stream
    upgrade: np.ndarray        # probability of using bits + 1
    fallback: np.ndarray       # powered streams sent as BPSK despite missing the target

    @property
    def mean_bits(self) -> np.ndarray:
        return self.bits + self.upgrade


def plan_modulation(sinr, powers, beta, mode="naive", constants=DEFAULT_CONSTANTS):
    """Bit loading for every stream from its SINR.

    ``mode`` is ``"naive"`` or ``"prob"``; the naive plan has zero upgrade
    probabilities.
    """
    if mode not in ("naive", "prob"):
        raise ValueError(f"unknown modulation mode {mode!r}")
    sinr = np.asarray(sinr, float)
    L = sinr.size
    target = np.broadcast_to(np.asarray(beta, float), (L,)).copy()
    bits = np.zeros(L, int)
    up = np.zeros(L)
    fb = np.zeros(L, bool)
    for i in range(L):
        powered = powers[i] > 0
        bits[i] = naive_bits(sinr[i], target[i], constants, powered)
        fb[i] = powered and bits[i] == 1 and model_ber(sinr[i], 1) > target[i]
        if mode == "prob":
            up[i] = upgrade_probability(sinr[i], target[i], bits[i], constants)
    return ModulationPlan(bits, target, up, fb)


@dataclass
class BerReport:
    bit_errors: np.ndarray     # per stream
    bits_sent: np.ndarray      # per stream
    n_trials: int

    @property
    def stream_ber(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.bits_sent > 0, self.bit_errors / np.maximum(self.bits_sent, 1), 0.0)

    @property
    def stream_bits(self) -> np.ndarray:
        """Average bits per transmission on every stream."""
        return self.bits_sent / self.n_trials

    @property
    def avg_bits(self) -> float:
        return float(self.stream_bits.sum())

    @property
    def avg_ber(self) -> float:
        total = self.bits_sent.sum()
        return float(self.bit_errors.sum() / total) if total else 0.0

    def user_bits(self, L) -> np.ndarray:
        edges = np.cumsum((0,) + tuple(L))
        return np.array([self.stream_bits[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])

    def user_ber(self, L) -> np.ndarray:
        edges = np.cumsum((0,) + tuple(L))
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            n = self.bits_sent[a:b].sum()
            out.append(self.bit_errors[a:b].sum() / n if n else 0.0)
        return np.array(out)


def gray(m):
    return m ^ (m >> 1)


def _popcount(x):
    x = np.asarray(x, np.int64)
    count = np.zeros_like(x)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


def simulate_ber(channels, state, plan, n_trials, sigma2, rng):
    """Send ``n_trials`` Gray-labelled PSK symbol vectors through the
    downlink and count bit errors after per-stream linear decoding.

    In probabilistic plans each stream independently uses ``bits + 1`` on
    a transmission with probability ``plan.upgrade``.
    """
    gen = rng.generator() if hasattr(rng, "generator") else rng
    L = plan.bits.size
    T = int(n_trials)
    depth = np.repeat(plan.bits[:, None], T, axis=1)
    depth = depth + (gen.random((L, T)) < plan.upgrade[:, None])
    depth[plan.bits == 0] = 0
    order = np.where(depth > 0, 2 ** depth, 1)
    m = gen.integers(0, 2 ** (MAX_BITS + 1), size=(L, T)) % order
    x = np.where(depth > 0, np.exp(2j * np.pi * m / order), 0.0)

    errors = np.zeros(L, np.int64)
    sent = depth.sum(axis=1)
    tx = state.U @ (np.sqrt(state.p)[:, None] * x)            # (M, T)
    for k, sl in enumerate(state.slices):
        Hk = channels.H[k]
        y = Hk.conj().T @ tx + np.sqrt(sigma2) * complex_normal(gen, (Hk.shape[1], T))
        Vk = state.V[k]
        xhat = Vk.conj().T @ y
        gain = np.einsum("ij,ij->j", Vk.conj(), Hk.conj().T @ state.U[:, sl]) * np.sqrt(state.p[sl])
        for j, i in enumerate(range(sl.start, sl.stop)):
            if plan.bits[i] == 0 or abs(gain[j]) == 0:
                continue
            z = xhat[j] / gain[j]
            Mi = order[i]
            mhat = np.mod(np.rint(np.angle(z) / (2 * np.pi / Mi)).astype(np.int64), Mi)
            errors[i] = _popcount(gray(m[i]) ^ gray(mhat)).sum()
    return BerReport(errors, sent, T)
