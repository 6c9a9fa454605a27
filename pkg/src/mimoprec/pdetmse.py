"""Reference solver for the joint (matrix-determinant) MSE criterion.

The variable is G = U sqrt(P) (M x L), on which the objective
sum_k log det E_k depends only through G_k G_k^H.  Because the objective
decreases monotonically as G is scaled up, the optimum sits on the sphere
||G||_F^2 = P_max; we optimize an unconstrained direction X with
G = sqrt(P_max) X / ||X||_F using L-BFGS and an analytic gradient.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize

from .linalg import hermitize, logdet_hpd, normalize_columns, solve_hpd
from .mse import DesignState, mmse_downlink_decoder, user_slices
from .system import RngStream, complex_normal, validate_config

log = logging.getLogger(__name__)

__all__ = ["PdetmseError", "joint_objective", "joint_gradient",
           "numeric_gradient_check", "state_from_joint", "pdetmse_solve"]


class PdetmseError(RuntimeError):
    pass


def _terms(G, channels, sigma2, L):
    """Yield (k, H_k, J_k, R_k, mask_k) for every user."""
    for k, sl in enumerate(user_slices(L)):
        Hk = channels.H[k]
        B = Hk.conj().T @ G
        eye = sigma2 * np.eye(B.shape[0])
        Jk = hermitize(B @ B.conj().T + eye)
        Bo = B.copy()
        Bo[:, sl] = 0.0
        Rk = hermitize(Bo @ Bo.conj().T + eye)
        yield k, sl, Hk, Jk, Rk


def joint_objective(G, channels, sigma2, L):
    """sum_k log det E_k = sum_k [log det R_{N+I,k} - log det J_k]."""
    return float(sum(logdet_hpd(Rk) - logdet_hpd(Jk)
                     for _, _, _, Jk, Rk in _terms(G, channels, sigma2, L)))


def joint_gradient(G, channels, sigma2, L):
    """Gradient with respect to the real coordinates (Re G, Im G), packed
    as the complex matrix d/dRe + i d/dIm."""
    grad = np.zeros_like(G, dtype=complex)
    for k, sl, Hk, Jk, Rk in _terms(G, channels, sigma2, L):
        grad -= 2.0 * Hk @ solve_hpd(Jk, Hk.conj().T @ G)
        Go = G.copy()
        Go[:, sl] = 0.0
        gR = 2.0 * Hk @ solve_hpd(Rk, Hk.conj().T @ Go)
        gR[:, sl] = 0.0
        grad += gR
    return grad


def numeric_gradient_check(G, channels, sigma2, L, h=1e-6):
    """Max over real coordinates of |analytic - central FD| / (1 + |FD|)."""
    G = np.asarray(G, dtype=complex)
    analytic = joint_gradient(G, channels, sigma2, L)
    worst = 0.0
    for idx in np.ndindex(G.shape):
        for unit, part in ((1.0, np.real), (1j, np.imag)):
            Gp, Gm = G.copy(), G.copy()
            Gp[idx] += unit * h
            Gm[idx] -= unit * h
            fd = (joint_objective(Gp, channels, sigma2, L)
                  - joint_objective(Gm, channels, sigma2, L)) / (2 * h)
            worst = max(worst, abs(part(analytic[idx]) - fd) / (1 + abs(fd)))
    return worst


def state_from_joint(G, channels, sigma2, L, rng=None):
    """Split G into unit-norm precoders and powers, with MMSE decoders."""
    p = np.linalg.norm(G, axis=0) ** 2
    fallback = None
    if rng is not None:
        fallback = normalize_columns(complex_normal(rng, G.shape))[0]
    U, _ = normalize_columns(G, fallback=fallback, tol=1e-300)
    V = []
    for k in range(len(L)):
        Vk = mmse_downlink_decoder(k, channels, U, p, sigma2, L)
        V.append(normalize_columns(Vk, tol=1e-300)[0])
    return DesignState(U, V, p, p.copy())


def _pack(X):
    return np.concatenate([X.real.ravel(), X.imag.ravel()])


def _unpack(x, shape):
    n = x.size // 2
    return (x[:n] + 1j * x[n:]).reshape(shape)


def _local_solve(X0, channels, sigma2, L, P_max, maxiter):
    shape = X0.shape
    scale = np.sqrt(P_max)
    history = []

    def fun(x):
        nx = np.linalg.norm(x)
        G = scale * _unpack(x, shape) / nx
        f = joint_objective(G, channels, sigma2, L)
        g = _pack(joint_gradient(G, channels, sigma2, L))
        xh = x / nx
        # chain rule through the map onto the power sphere
        gx = (scale / nx) * (g - (g @ xh) * xh)
        history.append(f)
        return f, gx

    res = minimize(fun, _pack(X0), jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-10})
    x = res.x
    G = scale * _unpack(x, shape) / np.linalg.norm(x)
    return G, joint_objective(G, channels, sigma2, L), res, history


def rzf_start(channels, L, active, P_max, sigma2):
    """Regularized channel inversion on each user's strongest directions.

    ``active[k]`` streams of user k (at most ``L[k]``) are aimed at the
    dominant left singular directions of H_k^H; remaining columns are zero.
    """
    rows = []
    for h, a in zip(channels.H, active):
        w, _, _ = np.linalg.svd(h.conj().T)
        rows.append(w[:, :a].conj().T @ h.conj().T)
    E = np.vstack(rows)
    n = E.shape[0]
    W = E.conj().T @ np.linalg.inv(E @ E.conj().T + (n * sigma2 / P_max) * np.eye(n))
    G = np.zeros((channels.M, sum(L)), complex)
    col = 0
    for sl, a in zip(user_slices(L), active):
        G[:, sl.start:sl.start + a] = W[:, col:col + a]
        col += a
    return G * np.sqrt(P_max) / np.linalg.norm(G)


def _structured_starts(cfg, channels):
    """Full-rank start plus one start per user with a stream removed."""
    patterns = [tuple(cfg.L)]
    for k, l in enumerate(cfg.L):
        if l >= 2:
            patterns.append(tuple(l - (i == k) for i, l in enumerate(cfg.L)))
    return [rzf_start(channels, cfg.L, a, cfg.P_max, cfg.sigma2) for a in patterns]


def pdetmse_solve(cfg, channels, rng: RngStream, n_starts: int = 4, maxiter: int = 3000,
                  structured=True, return_info=False):
    """Best local minimizer of sum_k log det E_k over several starts.

    Starts are ``n_starts`` random points drawn from ``rng`` and, when
    ``structured`` is set, regularized-inversion points covering the full
    stream pattern and every pattern with one user's stream count reduced
    by one (zero columns stay zero under gradient descent, so these probe
    the lower-rank basins).

    Returns ``(DesignState, objective)``; ``-objective`` is the downlink sum
    rate in nats.  With ``return_info`` a dict with iteration counts is
    appended.
    """
    validate_config(cfg)
    channels.check(cfg)
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    gen = rng.generator()
    starts = [complex_normal(gen, (cfg.M, cfg.total_streams)) for _ in range(n_starts)]
    if structured:
        starts = _structured_starts(cfg, channels) + starts
    best, iters, failures = None, 0, 0
    for s, X0 in enumerate(starts):
        try:
            G, f, res, _ = _local_solve(X0, channels, cfg.sigma2, cfg.L, cfg.P_max, maxiter)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("PDetMSE start %d failed: %s", s, exc)
            failures += 1
            continue
        iters += res.nit
        if not np.isfinite(f):
            failures += 1
            continue
        if best is None or f < best[1]:
            best = (G, f, res.success)
    if best is None:
        raise PdetmseError(f"all {len(starts)} PDetMSE starts failed")
    G, f, ok = best
    state = state_from_joint(G, channels, cfg.sigma2, cfg.L, gen)
    if return_info:
        return state, float(f), {"iterations": iters, "converged": bool(ok),
                                 "starts": len(starts), "failures": failures}
    return state, float(f)
