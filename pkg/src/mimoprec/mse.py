"""Covariances, MMSE filters, per-stream SINR/MSE and achievable rates.

Conventions
-----------
* ``H[k]`` is the (M, N_k) channel of user k; the downlink channel seen by
  the user is ``H[k]^H``.
* ``U`` is the (M, L) downlink precoder, columns grouped by user.
* ``V`` is a list of per-user (N_k, L_k) decoders (virtual-uplink precoders).
* ``p`` and ``q`` are length-L downlink and virtual-uplink power vectors.
* All logarithms are natural; convert with :func:`nats_to_bits` at the edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import hermitize, logdet_hpd, solve_hpd

__all__ = [
    "DesignState", "RateBreakdown", "user_slices", "stream_owner",
    "uplink_covariance", "downlink_covariance", "downlink_mse_matrix", "mmse_downlink_decoder",
    "mmse_uplink_receiver", "stream_sinr_uplink", "stream_mse_uplink",
    "stream_sinr_downlink", "user_rate_linear", "pdetmse_objective",
    "effective_channels", "cross_gains", "uplink_mses", "uplink_sinrs",
    "downlink_sinrs", "sum_rate_linear", "rate_breakdown", "nats_to_bits",
]


def nats_to_bits(x):
    return np.asarray(x) / np.log(2.0) if np.ndim(x) else float(x) / np.log(2.0)


def user_slices(L):
    """Column slices of the global stream axis, one per user."""
    out, start = [], 0
    for l in L:
        out.append(slice(start, start + int(l)))
        start += int(l)
    return out


def stream_owner(L):
    """Array mapping every global stream index to its user."""
    return np.repeat(np.arange(len(L)), L)


@dataclass
class DesignState:
    """Downlink precoder/powers and virtual-uplink precoder/powers."""
    U: np.ndarray
    V: list
    p: np.ndarray
    q: np.ndarray

    @property
    def L(self) -> tuple:
        return tuple(v.shape[1] for v in self.V)

    @property
    def slices(self):
        return user_slices(self.L)

    def index(self, k: int, j: int) -> int:
        """Global stream position of stream j of user k (zero-based)."""
        if not 0 <= j < self.L[k]:
            raise IndexError(f"stream {j} out of range for user {k}")
        return sum(self.L[:k]) + j

    def copy(self) -> "DesignState":
        return DesignState(self.U.copy(), [v.copy() for v in self.V],
                           self.p.copy(), self.q.copy())

    def check(self, P_max: float, tol: float = 1e-10) -> None:
        """Raise AssertionError when a norm or power invariant is broken."""
        for name, X in [("U", self.U)] + [(f"V[{k}]", v) for k, v in enumerate(self.V)]:
            if X.shape[1]:
                n = np.linalg.norm(X, axis=0)
                assert np.all(np.abs(n - 1) < tol), f"{name} columns not unit norm: {n}"
        for name, x in (("p", self.p), ("q", self.q)):
            assert np.all(x >= 0), f"{name} has negative entries"
            assert x.sum() <= P_max * (1 + 1e-9) + 1e-12, f"{name} exceeds P_max"


@dataclass
class RateBreakdown:
    user_rates: np.ndarray
    sinr: np.ndarray
    mse: np.ndarray
    unit: str = "nats"

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.user_rates))


def effective_channels(channels, V):
    """Columns h~_i = H_k v_kj of the (M, L) matrix H V."""
    cols = [h @ v for h, v in zip(channels.H, V)]
    return np.hstack(cols) if cols else np.zeros((channels.M, 0), complex)


def uplink_covariance(channels, V, q, sigma2):
    """J = H V Q V^H H^H + sigma2 I_M."""
    A = effective_channels(channels, V)
    q = np.asarray(q, dtype=float)
    if A.shape[1] != q.size:
        raise ValueError(f"power vector has {q.size} entries, expected {A.shape[1]}")
    J = (A * q) @ A.conj().T + sigma2 * np.eye(channels.M)
    return hermitize(J)


def downlink_covariance(k, channels, U, p, sigma2):
    """J_k = H_k^H U P U^H H_k + sigma2 I."""
    B = channels.H[k].conj().T @ U
    return hermitize((B * p) @ B.conj().T + sigma2 * np.eye(B.shape[0]))


def downlink_mse_matrix(k, channels, state, sigma2):
    """General downlink MSE matrix of user k for arbitrary decoder V_k."""
    Hk = channels.H[k]
    sl = state.slices[k]
    Vk = state.V[k]
    B = Vk.conj().T @ Hk.conj().T @ state.U          # (L_k, L)
    cross = (B * state.p) @ B.conj().T
    sqp = np.sqrt(state.p[sl])
    direct = B[:, sl] * sqp                           # V_k^H H_k^H U_k sqrt(P_k)
    E = cross + sigma2 * (Vk.conj().T @ Vk) - direct - direct.conj().T + np.eye(Vk.shape[1])
    return hermitize(E)


def mmse_downlink_decoder(k, channels, U, p, sigma2, L):
    """V_k = J_k^{-1} H_k^H U_k sqrt(P_k), returned unnormalized."""
    sl = user_slices(L)[k]
    Jk = downlink_covariance(k, channels, U, p, sigma2)
    rhs = channels.H[k].conj().T @ U[:, sl] * np.sqrt(p[sl])
    return solve_hpd(Jk, rhs)


def mmse_uplink_receiver(k, j, channels, V, q, sigma2):
    """u_kj = J^{-1} H_k v_kj sqrt(q_kj), unnormalized."""
    i = sum(v.shape[1] for v in V[:k]) + j
    J = uplink_covariance(channels, V, q, sigma2)
    return solve_hpd(J, channels.H[k] @ V[k][:, j] * np.sqrt(q[i]))


def cross_gains(channels, U, V):
    """C[i, j] = |h~_i^H u_j|^2 over all stream pairs."""
    A = effective_channels(channels, V)
    return np.abs(A.conj().T @ U) ** 2


def uplink_sinrs(channels, state, sigma2):
    """Virtual-uplink SINR of every stream for the receivers in ``state.U``."""
    C = cross_gains(channels, state.U, state.V)
    sig = state.q * np.diag(C)
    interf = state.q @ C - sig
    noise = sigma2 * np.linalg.norm(state.U, axis=0) ** 2
    denom = interf + noise
    if np.any(denom <= 0):
        raise ValueError("zero receiver vector")
    return sig / denom


def downlink_sinrs(channels, state, sigma2):
    """Downlink SINR of every stream for decoders ``state.V``."""
    C = cross_gains(channels, state.U, state.V)
    sig = state.p * np.diag(C)
    interf = C @ state.p - sig
    noise = sigma2 * np.concatenate([np.linalg.norm(v, axis=0) ** 2 for v in state.V])
    denom = interf + noise
    if np.any(denom <= 0):
        raise ValueError("zero decoder vector")
    return sig / denom


def stream_sinr_uplink(k, j, channels, state, sigma2):
    return float(uplink_sinrs(channels, state, sigma2)[state.index(k, j)])


def stream_sinr_downlink(k, j, channels, state, sigma2):
    return float(downlink_sinrs(channels, state, sigma2)[state.index(k, j)])


def uplink_mses(channels, V, q, sigma2):
    """eps_i = 1 - q_i h~_i^H J^{-1} h~_i under MMSE reception."""
    A = effective_channels(channels, V)
    J = uplink_covariance(channels, V, q, sigma2)
    X = solve_hpd(J, A)
    quad = np.real(np.einsum("ij,ij->j", A.conj(), X))
    return 1.0 - np.asarray(q) * quad


def stream_mse_uplink(k, j, channels, V, q, sigma2):
    i = sum(v.shape[1] for v in V[:k]) + j
    return float(uplink_mses(channels, V, q, sigma2)[i])


def user_rate_linear(k, channels, U, p, sigma2, L):
    """log det J_k - log det R_{N+I,k} (nats)."""
    sl = user_slices(L)[k]
    Jk = downlink_covariance(k, channels, U, p, sigma2)
    Bk = channels.H[k].conj().T @ U[:, sl]
    Rk = Jk - (Bk * p[sl]) @ Bk.conj().T
    return max(logdet_hpd(Jk) - logdet_hpd(hermitize(Rk)), 0.0)


def sum_rate_linear(channels, U, p, sigma2, L):
    return float(sum(user_rate_linear(k, channels, U, p, sigma2, L)
                     for k in range(len(L))))


def pdetmse_objective(channels, U, p, sigma2, L):
    """Sum over users of log det of the MMSE-decoded downlink MSE matrix."""
    total = 0.0
    for k, sl in enumerate(user_slices(L)):
        if sl.stop == sl.start:
            continue
        Jk = downlink_covariance(k, channels, U, p, sigma2)
        G = channels.H[k].conj().T @ U[:, sl] * np.sqrt(p[sl])
        E = np.eye(G.shape[1]) - G.conj().T @ solve_hpd(Jk, G)
        total += logdet_hpd(hermitize(E))
    return total


def rate_breakdown(channels, state, sigma2):
    """Downlink user rates (joint MMSE decoding) plus per-stream SINR/MSE."""
    L = state.L
    rates = np.array([user_rate_linear(k, channels, state.U, state.p, sigma2, L)
                      for k in range(len(L))])
    sinr = downlink_sinrs(channels, state, sigma2)
    return RateBreakdown(rates, sinr, 1.0 / (1.0 + sinr))
