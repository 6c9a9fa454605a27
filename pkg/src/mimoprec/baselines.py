"""Reference schemes: DPC sum capacity, ZF/BD with waterfilling, and
exhaustive receive-antenna subset selection for ZF/BD."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .linalg import hermitize, logdet_hpd, solve_hpd
from .mse import DesignState

__all__ = ["OrthogonalizationError", "SubsetChoice", "MacCovariances",
           "waterfill", "single_user_capacity", "dpc_objective",
           "dpc_sum_capacity", "dpc_kkt_residual", "zf_precoder",
           "bd_precoder", "enumerate_subsets", "candidate_count",
           "best_subset_orthogonal"]

RANK_TOL = 1e-10


class OrthogonalizationError(ValueError):
    """ZF/BD cannot be formed for the requested antenna subset."""


def waterfill(gains, P, sigma2):
    """Powers p_i = max(0, mu - sigma2/g_i) with sum(p) = P.

    The water level is located exactly by scanning the sorted breakpoints.
    Zero gains always get zero power.

    Returns
    -------
    powers : ndarray
    mu : float
        The water level.
    """
    g = np.asarray(gains, dtype=float)
    if not np.any(g > 0):
        raise ValueError("waterfilling needs at least one positive gain")
    p = np.zeros_like(g)
    if P <= 0:
        return p, float(sigma2 / g.max())
    pos = np.flatnonzero(g > 0)
    floors = sigma2 / g[pos]
    order = np.argsort(floors)
    f = floors[order]
    csum = np.cumsum(f)
    for n in range(len(f), 0, -1):
        mu = (P + csum[n - 1]) / n
        if mu > f[n - 1]:
            break
    p[pos[order[:n]]] = mu - f[:n]
    return p, float(mu)


def single_user_capacity(H, P, sigma2):
    """log det(I + H S H^H / sigma2) maximized over tr(S) <= P (nats).

    ``H`` is the (M, N) uplink-convention channel of one user; the value
    equals the downlink single-user MIMO capacity.
    """
    s = np.linalg.svd(H, compute_uv=False)
    g = s[s > RANK_TOL * max(s.max(), 1e-300)] ** 2
    if P <= 0 or g.size == 0:
        return 0.0
    p, _ = waterfill(g, P, sigma2)
    return float(np.sum(np.log1p(g * p / sigma2)))


@dataclass
class MacCovariances:
    S: list

    def total_power(self) -> float:
        return float(sum(np.real(np.trace(s)) for s in self.S))


def _mac_matrix(channels, S, sigma2):
    M = channels.M
    Z = np.eye(M, dtype=complex)
    for h, s in zip(channels.H, S):
        Z += h @ s @ h.conj().T / sigma2
    return hermitize(Z)


def dpc_objective(channels, S, sigma2):
    """log det(I + sigma2^{-1} sum_k H_k S_k H_k^H)."""
    return logdet_hpd(_mac_matrix(channels, S, sigma2))


def _mac_gradient(channels, S, sigma2):
    Z = _mac_matrix(channels, S, sigma2)
    return [hermitize(h.conj().T @ solve_hpd(Z, h)) / sigma2 for h in channels.H]


def _project(S, P):
    """Project block-diagonal Hermitian S onto {S_k >= 0, sum tr S_k <= P}."""
    eig = [np.linalg.eigh(hermitize(s)) for s in S]
    lam = np.concatenate([w for w, _ in eig])
    clipped = np.maximum(lam, 0.0)
    if clipped.sum() > P:
        u = np.sort(lam)[::-1]
        css = np.cumsum(u) - P
        rho = np.nonzero(u - css / np.arange(1, u.size + 1) > 0)[0][-1]
        clipped = np.maximum(lam - css[rho] / (rho + 1.0), 0.0)
    out, i = [], 0
    for w, vec in eig:
        n = w.size
        out.append(hermitize((vec * clipped[i:i + n]) @ vec.conj().T))
        i += n
    return out


def _fw_gap(S, G, P):
    """Frank-Wolfe bound on suboptimality: P lambda_max - sum tr(G_k S_k)."""
    nu = max(np.linalg.eigvalsh(g)[-1] for g in G)
    inner = sum(np.real(np.vdot(g, s)) for g, s in zip(G, S))
    return P * nu - inner, nu


def dpc_sum_capacity(channels, P_max, sigma2, tol=1e-9, max_iter=20000,
                     return_covariances=False):
    """Broadcast-channel sum capacity (nats) via its MAC dual.

    Projected gradient ascent with Barzilai-Borwein steps and Armijo
    backtracking on the block-diagonal uplink covariances.  Iteration stops
    once the Frank-Wolfe gap (an upper bound on the distance to the
    optimum of this concave problem) falls below ``tol`` relative to the
    objective.
    """
    if P_max <= 0:
        zero = MacCovariances([np.zeros((n, n), complex) for n in channels.N])
        return (0.0, zero) if return_covariances else 0.0
    Ntot = sum(channels.N)
    S = [np.eye(n, dtype=complex) * (P_max / Ntot) for n in channels.N]
    f = dpc_objective(channels, S, sigma2)
    G = _mac_gradient(channels, S, sigma2)
    step = P_max / max(np.linalg.norm(np.concatenate([g.ravel() for g in G])), 1e-300)
    prev = None
    for _ in range(max_iter):
        gap, _ = _fw_gap(S, G, P_max)
        if gap <= tol * max(abs(f), 1e-12):
            break
        if prev is not None:
            dS = np.concatenate([(a - b).ravel() for a, b in zip(S, prev[0])])
            dG = np.concatenate([(a - b).ravel() for a, b in zip(G, prev[1])])
            curv = -np.real(np.vdot(dS, dG))
            if curv > 0:
                step = np.real(np.vdot(dS, dS)) / curv
        for _ in range(60):
            trial = _project([s + step * g for s, g in zip(S, G)], P_max)
            d = [t - s for t, s in zip(trial, S)]
            f_t = dpc_objective(channels, trial, sigma2)
            lin = sum(np.real(np.vdot(g, x)) for g, x in zip(G, d))
            if f_t >= f + 1e-4 * lin:
                break
            step *= 0.5
        else:
            break
        if f_t <= f and lin <= 1e-16 * max(abs(f), 1.0):
            break
        prev = (S, G)
        S, f = trial, f_t
        G = _mac_gradient(channels, S, sigma2)
    cov = MacCovariances(S)
    return (float(f), cov) if return_covariances else float(f)


def dpc_kkt_residual(channels, cov, sigma2, P_max, active_tol=1e-6):
    """Largest relative spread between active-eigenmode water levels.

    For each active eigenvector e of S_k the marginal gain e^H G_k e must
    equal the common level max_k lambda_max(G_k) at the optimum.
    """
    G = _mac_gradient(channels, cov.S, sigma2)
    nu = max(np.linalg.eigvalsh(g)[-1] for g in G)
    worst = 0.0
    for g, s in zip(G, cov.S):
        w, vec = np.linalg.eigh(s)
        for lam, e in zip(w, vec.T):
            if lam > active_tol * P_max:
                worst = max(worst, abs(np.real(e.conj() @ g @ e) - nu) / nu)
    return worst


@dataclass(frozen=True)
class SubsetChoice:
    """Selected receive antennas, one tuple of local indices per user."""
    antennas: tuple

    @classmethod
    def full(cls, channels):
        return cls(tuple(tuple(range(n)) for n in channels.N))

    @property
    def count(self) -> int:
        return sum(len(a) for a in self.antennas)


def _selected_rows(channels, subset):
    """Rows of the downlink channel H^H for the selected antennas."""
    rows, owner = [], []
    for k, (h, sel) in enumerate(zip(channels.H, subset.antennas)):
        for a in sel:
            rows.append(h[:, a].conj())
            owner.append(k)
    return np.array(rows).reshape(len(rows), channels.M), owner


def _selection(n, sel, coeffs):
    """Lift (len(sel), m) coefficients into an (n, m) decoder."""
    V = np.zeros((n, coeffs.shape[1]), complex)
    V[list(sel), :] = coeffs
    return V


def _state_from_streams(channels, U_cols, V_blocks, gains, P_max, sigma2):
    gains = np.asarray(gains, dtype=float)
    M = channels.M
    U = np.column_stack(U_cols) if U_cols else np.zeros((M, 0), complex)
    p, _ = waterfill(gains, P_max, sigma2)
    rate = float(np.sum(np.log1p(gains * p / sigma2)))
    return DesignState(U, V_blocks, p, p.copy()), rate


def zf_precoder(channels, subset=None, P_max=1.0, sigma2=1.0):
    """Zero-forcing over the selected receive antennas, one stream each.

    Returns the design and its sum rate in nats.
    """
    subset = subset or SubsetChoice.full(channels)
    A, owner = _selected_rows(channels, subset)
    n = A.shape[0]
    if n == 0:
        raise OrthogonalizationError("no antennas selected")
    if n > channels.M:
        raise OrthogonalizationError(
            f"{n} selected antennas exceed M={channels.M} transmit antennas")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise OrthogonalizationError("selected channel is rank deficient")
    W = A.conj().T @ np.linalg.inv(A @ A.conj().T)      # pseudo-inverse
    norms = np.linalg.norm(W, axis=0)
    U = W / norms
    gains = 1.0 / norms ** 2
    V = []
    pos = 0
    for k, sel in enumerate(subset.antennas):
        m = len(sel)
        V.append(_selection(channels.N[k], sel, np.eye(m)))
        pos += m
    return _state_from_streams(channels, list(U.T), V, gains, P_max, sigma2)


def bd_precoder(channels, subset=None, P_max=1.0, sigma2=1.0):
    """Block diagonalization over the selected antennas with joint
    waterfilling across all users' eigenmodes.

    Returns the design and its sum rate in nats.
    """
    subset = subset or SubsetChoice.full(channels)
    A, owner = _selected_rows(channels, subset)
    owner = np.asarray(owner)
    if A.shape[0] == 0:
        raise OrthogonalizationError("no antennas selected")
    M = channels.M
    U_cols, V, gains = [], [], []
    for k, sel in enumerate(subset.antennas):
        if not sel:
            V.append(np.zeros((channels.N[k], 0), complex))
            continue
        Ak = A[owner == k]
        others = A[owner != k]
        if others.shape[0]:
            _, s, vh = np.linalg.svd(others)
            r = int(np.sum(s > RANK_TOL * s[0]))
            null = vh[r:].conj().T
        else:
            null = np.eye(M, dtype=complex)
        if null.shape[1] == 0:
            raise OrthogonalizationError(f"no nullspace left for user {k}")
        uu, s, vvh = np.linalg.svd(Ak @ null, full_matrices=False)
        m = int(np.sum(s > RANK_TOL * max(s.max(), 1e-300)))
        if m == 0:
            raise OrthogonalizationError(f"user {k} has no usable eigenmode")
        U_cols.extend((null @ vvh[:m].conj().T).T)
        V.append(_selection(channels.N[k], sel, uu[:, :m]))
        gains.extend(s[:m] ** 2)
    return _state_from_streams(channels, U_cols, V, gains, P_max, sigma2)


def enumerate_subsets(N, M):
    """All nonempty antenna subsets of size at most min(sum N, M).

    Yields :class:`SubsetChoice` objects; the count is
    sum_{k=1}^{min(N, M)} C(N, k).
    """
    labels = [(k, a) for k, n in enumerate(N) for a in range(n)]
    for size in range(1, min(len(labels), M) + 1):
        for combo in itertools.combinations(labels, size):
            per_user = [[] for _ in N]
            for k, a in combo:
                per_user[k].append(a)
            yield SubsetChoice(tuple(tuple(x) for x in per_user))


def candidate_count(N, M) -> int:
    return sum(1 for _ in enumerate_subsets(N, M))


def best_subset_orthogonal(channels, scheme, P_max, sigma2, max_antennas=20):
    """Exhaustively pick the antenna subset maximizing the ZF or BD rate.

    Returns ``(SubsetChoice, rate_nats)``; infeasible subsets are skipped.
    """
    scheme = scheme.upper()
    design = {"ZF": zf_precoder, "BD": bd_precoder}.get(scheme)
    if design is None:
        raise ValueError(f"unknown orthogonalization scheme {scheme!r}")
    if sum(channels.N) > max_antennas:
        raise ValueError(
            f"{sum(channels.N)} receive antennas exceed the enumeration guard "
            f"of {max_antennas}")
    best, best_rate = None, -np.inf
    for subset in enumerate_subsets(channels.N, channels.M):
        try:
            _, rate = design(channels, subset, P_max, sigma2)
        except OrthogonalizationError:
            continue
        if rate > best_rate:
            best, best_rate = subset, rate
    if best is None:
        raise OrthogonalizationError("no feasible antenna subset")
    return best, float(best_rate)
