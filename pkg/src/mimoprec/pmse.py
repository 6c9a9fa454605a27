"""Iterative minimization of the product of per-stream MSEs.

Each iteration alternates four updates, each holding the other three
variables fixed:

1. downlink precoder ``U`` <- normalized virtual-uplink MMSE receivers,
2. downlink powers ``p`` <- MSE/SINR duality with the virtual uplink,
3. virtual-uplink precoder ``V`` <- normalized downlink MMSE decoders,
4. virtual-uplink powers ``q`` <- local minimization of the MSE product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import normalize_columns, solve_hpd
from .mse import (DesignState, cross_gains, downlink_covariance,
                  downlink_sinrs, effective_channels, mmse_downlink_decoder,
                  sum_rate_linear, uplink_covariance, uplink_mses,
                  uplink_sinrs, user_slices)
from .system import RngStream, complex_normal, validate_config

log = logging.getLogger(__name__)

__all__ = ["InfeasibleTargets", "PmseTrace", "init_state",
           "downlink_power_from_duality", "uplink_power_from_duality",
           "uplink_power_allocation", "pmse_iterate", "pmse_solve",
           "pmse_value", "project_simplex", "update_downlink_precoder",
           "update_uplink_precoder"]

#: |v^H H^H u| below this marks a stream as powerless in the duality system.
GAIN_FLOOR = 1e-14
#: Streams whose virtual-uplink power drops below FREEZE * P_max are switched off.
FREEZE = 1e-12


class InfeasibleTargets(RuntimeError):
    """The requested SINR targets cannot be met with nonnegative powers."""


@dataclass
class PmseTrace:
    objective: list = field(default_factory=list)   # PMSE after each iteration
    substeps: list = field(default_factory=list)    # PMSE after every update
    sum_rate: list = field(default_factory=list)    # downlink rate (nats) per iteration
    powers: list = field(default_factory=list)      # q after each iteration
    converged: bool = False
    iterations: int = 0
    events: list = field(default_factory=list)


def pmse_value(sinr) -> float:
    """Product of MSEs 1/(1 + SINR) over all streams."""
    return float(np.exp(-np.sum(np.log1p(np.asarray(sinr)))))


def init_state(cfg, channels, rng: RngStream) -> DesignState:
    """Random unit-norm precoders with uniform power on every stream."""
    gen = rng.generator()
    L = cfg.total_streams
    U, _ = normalize_columns(complex_normal(gen, (cfg.M, L)))
    p = np.full(L, cfg.P_max / L)
    V = []
    for k in range(cfg.K):
        Vk = mmse_downlink_decoder(k, channels, U, p, cfg.sigma2, cfg.L)
        V.append(normalize_columns(Vk, tol=1e-300)[0])
    return DesignState(U, V, p, p.copy())


def _duality_system(C, gamma, noise, transpose):
    L = gamma.size
    out = np.zeros(L)
    active = (gamma > 0) & (np.sqrt(np.diag(C)) >= GAIN_FLOOR)
    if not np.any(active):
        return out
    Psi = C.copy()
    np.fill_diagonal(Psi, 0.0)
    if transpose:
        Psi = Psi.T
    idx = np.flatnonzero(active)
    A = np.diag(np.diag(C)[idx] / gamma[idx]) - Psi[np.ix_(idx, idx)]
    try:
        x = np.linalg.solve(A, noise[idx])
    except np.linalg.LinAlgError as exc:
        raise InfeasibleTargets("singular duality system") from exc
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise InfeasibleTargets(f"negative power in duality solution: {x}")
    out[idx] = x
    return out


def downlink_power_from_duality(channels, U, V, gamma, sigma2):
    """Downlink powers p = sigma2 (D^{-1} - Psi)^{-1} 1 meeting SINR targets.

    ``Psi[i, j] = |h~_i^H u_j|^2`` off the diagonal and
    ``D = diag(gamma_i / |h~_i^H u_i|^2)``.  Streams with zero target or a
    vanishing direct gain receive zero power.
    """
    gamma = np.asarray(gamma, dtype=float)
    C = cross_gains(channels, U, V)
    noise = sigma2 * np.concatenate([np.linalg.norm(v, axis=0) ** 2 for v in V])
    return _duality_system(C, gamma, noise, transpose=False)


def uplink_power_from_duality(channels, U, V, gamma, sigma2):
    """Virtual-uplink powers meeting SINR targets with receivers ``U``."""
    gamma = np.asarray(gamma, dtype=float)
    C = cross_gains(channels, U, V)
    noise = sigma2 * np.linalg.norm(U, axis=0) ** 2
    return _duality_system(C, gamma, noise, transpose=True)


def project_simplex(y, total):
    """Euclidean projection of y onto {x >= 0, sum(x) = total}."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


class _LogPmse:
    """sum_i log eps_i(q) and its gradient for fixed virtual-uplink precoders."""

    def __init__(self, A, sigma2, active):
        self.A = A
        self.sigma2 = sigma2
        self.active = active
        self.eye = np.eye(A.shape[0])

    def _parts(self, q):
        A = self.A
        J = (A * q) @ A.conj().T + self.sigma2 * self.eye
        B = A.conj().T @ solve_hpd(J, A)
        eps = 1.0 - q * np.real(np.diag(B))
        return B, eps

    def value(self, q):
        _, eps = self._parts(q)
        e = eps[self.active]
        if np.any(e <= 0):
            return np.inf
        return float(np.sum(np.log(e)))

    def value_grad(self, q):
        B, eps = self._parts(q)
        a = self.active
        e = eps[a]
        if np.any(e <= 0):
            return np.inf, None
        W = np.abs(B) ** 2                       # |B_ij|^2
        # d eps_i / d q_j = q_i |B_ij|^2 - delta_ij B_ii
        jac = q[a, None] * W[a, :]
        jac[np.arange(a.sum()), np.flatnonzero(a)] -= np.real(np.diag(B))[a]
        grad = (jac / e[:, None]).sum(axis=0)
        return float(np.sum(np.log(e))), grad


def uplink_power_allocation(channels, V, P_max, sigma2, q0=None, active=None,
                            max_steps=500, tol=1e-13):
    """Locally minimize prod eps_kj(q) over q >= 0, sum(q) <= P_max.

    Projected gradient descent with Armijo backtracking, warm-started at
    the incumbent ``q0`` (uniform over ``active`` if omitted).  The result
    never has a larger objective than the incumbent.

    Returns
    -------
    q : ndarray
    ok : bool
        False when the descent could not make progress from a
        non-stationary point (the incumbent is returned).
    """
    A = effective_channels(channels, V)
    L = A.shape[1]
    active = np.ones(L, bool) if active is None else np.asarray(active, bool)
    if not np.any(active):
        return np.zeros(L), True
    if q0 is None:
        q0 = np.where(active, P_max / active.sum(), 0.0)
    q0 = np.where(active, np.maximum(q0, 0.0), 0.0)
    obj = _LogPmse(A, sigma2, active)
    incumbent = q0.copy()
    f_inc = obj.value(incumbent)

    # The objective decreases under uniform up-scaling of q, so the optimum
    # lies on the full-power face of the feasible set.
    s = q0.sum()
    q = q0 * (P_max / s) if s > 0 else np.where(active, P_max / active.sum(), 0.0)
    f, g = obj.value_grad(q)
    if not f <= f_inc:
        q, f = incumbent, f_inc
        f, g = obj.value_grad(q)

    idx = np.flatnonzero(active)
    step = 1.0 / max(np.max(np.abs(g[idx])), 1e-300) * P_max * 0.1
    ok = True
    prev_q = prev_g = None
    for _ in range(max_steps):
        if prev_q is not None:
            dq, dg = q[idx] - prev_q[idx], g[idx] - prev_g[idx]
            curv = dq @ dg
            if curv > 0:
                step = (dq @ dq) / curv
        accepted = False
        for _ in range(60):
            trial = np.zeros(L)
            trial[idx] = project_simplex(q[idx] - step * g[idx], P_max)
            d = trial - q
            if np.max(np.abs(d)) <= tol * P_max:
                break
            f_t = obj.value(trial)
            if f_t <= f + 1e-4 * (g @ d):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # stationary to working precision, or line search exhausted
            if np.max(np.abs(d)) > 1e-8 * P_max and step < 1e-30:
                ok = False
            break
        prev_q, prev_g = q, g
        q = trial
        f_new, g = obj.value_grad(q)
        done = abs(f - f_new) <= 1e-15 * max(1.0, abs(f))
        f = f_new
        if done:
            break

    small = active & (q > 0) & (q < FREEZE * P_max)
    if np.any(small):
        cand = np.where(small, 0.0, q)
        cand *= P_max / cand.sum() if cand.sum() > 0 else 0.0
        sub = _LogPmse(A, sigma2, active & ~small)
        # A frozen stream contributes log(1) = 0; compare over all active.
        if sub.value(cand) <= f + 1e-12:
            q = cand
            f = sub.value(cand)
    if f > f_inc:
        return incumbent, False
    return q, ok


@dataclass
class _Step:
    state: DesignState
    values: list
    events: list


def update_downlink_precoder(channels, state, sigma2):
    """Step 1: normalized virtual-uplink MMSE receivers J^{-1} H_k v_kj sqrt(q_kj).

    The sqrt(q) factor only scales each column and is dropped, so a stream
    without uplink power still gets the receiver it would use if switched
    back on.
    """
    A = effective_channels(channels, state.V)
    J = uplink_covariance(channels, state.V, state.q, sigma2)
    U, _ = normalize_columns(solve_hpd(J, A), fallback=state.U, tol=1e-300)
    return U


def update_uplink_precoder(channels, state, sigma2):
    """Step 3: normalized downlink MMSE decoders J_k^{-1} H_k^H U_k sqrt(P_k),
    with the per-column sqrt(P_k) scaling dropped as in step 1."""
    V = []
    for k, sl in enumerate(state.slices):
        Jk = downlink_covariance(k, channels, state.U, state.p, sigma2)
        Vt = solve_hpd(Jk, channels.H[k].conj().T @ state.U[:, sl])
        V.append(normalize_columns(Vt, fallback=state.V[k], tol=1e-300)[0])
    return V


def pmse_iterate(state: DesignState, channels, cfg) -> _Step:
    """One pass of the four updates.

    Returns the new state, the PMSE value after each of the four updates
    and any fallback events.  On an infeasible duality step the previous
    state is returned unchanged with an event recorded.
    """
    s2 = cfg.sigma2
    values, events = [], []
    st = state.copy()

    st.U = update_downlink_precoder(channels, st, s2)
    g_ul = uplink_sinrs(channels, st, s2)
    values.append(pmse_value(g_ul))

    try:
        st.p = downlink_power_from_duality(channels, st.U, st.V, g_ul, s2)
    except InfeasibleTargets as exc:
        events.append(f"duality-infeasible: {exc}")
        return _Step(state.copy(), [], events)
    values.append(pmse_value(downlink_sinrs(channels, st, s2)))

    st.V = update_uplink_precoder(channels, st, s2)
    g_dl = downlink_sinrs(channels, st, s2)
    values.append(pmse_value(g_dl))

    try:
        q_inc = uplink_power_from_duality(channels, st.U, st.V, g_dl, s2)
    except InfeasibleTargets as exc:
        events.append(f"reverse-duality-infeasible: {exc}")
        q_inc = st.q
    # every stream takes part so that a switched-off stream can come back
    q, ok = uplink_power_allocation(channels, st.V, cfg.P_max, s2, q0=q_inc)
    if not ok:
        events.append("power-step-no-progress")
    st.q = q
    values.append(pmse_value(1.0 / uplink_mses(channels, st.V, q, s2) - 1.0))
    return _Step(st, values, events)


def _solve_once(cfg, channels, rng):
    trace = PmseTrace()
    state = init_state(cfg, channels, rng)
    current = pmse_value(1.0 / uplink_mses(channels, state.V, state.q, cfg.sigma2) - 1.0)
    trace.objective.append(current)
    trace.sum_rate.append(sum_rate_linear(channels, state.U, state.p, cfg.sigma2, cfg.L))
    trace.powers.append(state.q.copy())
    for it in range(cfg.max_iters):
        step = pmse_iterate(state, channels, cfg)
        trace.events.extend(f"iter {it}: {e}" for e in step.events)
        if not step.values:
            break
        state = step.state
        trace.substeps.extend(step.values)
        new = step.values[-1]
        trace.objective.append(new)
        trace.sum_rate.append(sum_rate_linear(channels, state.U, state.p, cfg.sigma2, cfg.L))
        trace.powers.append(state.q.copy())
        trace.iterations = it + 1
        rel = (current - new) / current if current > 0 else 0.0
        current = new
        if rel < cfg.epsilon:
            trace.converged = True
            break
    if trace.iterations:
        # bring (U, p, V) in line with the final virtual-uplink powers
        st = state.copy()
        st.U = update_downlink_precoder(channels, st, cfg.sigma2)
        g_ul = uplink_sinrs(channels, st, cfg.sigma2)
        try:
            st.p = downlink_power_from_duality(channels, st.U, st.V, g_ul, cfg.sigma2)
            st.V = update_uplink_precoder(channels, st, cfg.sigma2)
            trace.substeps.append(pmse_value(g_ul))
            trace.substeps.append(pmse_value(downlink_sinrs(channels, st, cfg.sigma2)))
            state = st
        except InfeasibleTargets as exc:
            trace.events.append(f"final sync: {exc}")
    return state, trace


def pmse_solve(cfg, channels, rng: RngStream, n_starts: int = 1):
    """Run the alternating PMSE minimization, keeping the best of ``n_starts``.

    Returns the final :class:`DesignState` and its :class:`PmseTrace`.  The
    trace's ``sum_rate`` entries are downlink rates in nats.
    """
    validate_config(cfg)
    channels.check(cfg)
    best = None
    for s in range(n_starts):
        state, trace = _solve_once(cfg, channels, rng.child(s))
        final = trace.objective[-1]
        if best is None or final < best[1].objective[-1]:
            best = (state, trace)
        if not trace.converged:
            log.debug("PMSE start %d stopped after %d iterations without converging",
                      s, trace.iterations)
    return best
