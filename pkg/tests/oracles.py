"""Independent reference computations used only by the tests."""

import itertools
import math

import numpy as np


def waterfill_bisection(gains, P, sigma2, iters=200):
    """Water level by bisection on sum(max(0, mu - sigma2/g)) = P."""
    g = np.asarray(gains, float)
    lo, hi = 0.0, P + sigma2 / g[g > 0].min() + max(sigma2 / g[g > 0])
    for _ in range(iters):
        mu = 0.5 * (lo + hi)
        tot = np.sum(np.where(g > 0, np.maximum(0.0, mu - sigma2 / np.where(g > 0, g, 1)), 0.0))
        lo, hi = (mu, hi) if tot < P else (lo, mu)
    mu = 0.5 * (lo + hi)
    return np.where(g > 0, np.maximum(0.0, mu - sigma2 / np.where(g > 0, g, 1)), 0.0), mu


def single_user_capacity_oracle(H, P, sigma2):
    """Eigen-waterfilling on H H^H with the bisection oracle (nats)."""
    lam = np.linalg.eigvalsh(H @ H.conj().T)
    lam = lam[lam > 1e-12]
    p, _ = waterfill_bisection(lam, P, sigma2)
    return float(np.sum(np.log(1 + lam * p / sigma2)))


def sinr_term_by_term(channels, U, V, powers, sigma2, link):
    """SINRs by explicit accounting of every (stream, interferer) pair."""
    streams = [(k, j) for k, v in enumerate(V) for j in range(v.shape[1])]
    out = []
    for i, (k, j) in enumerate(streams):
        v = V[k][:, j]
        Hk = channels.H[k]
        if link == "down":
            sig = powers[i] * abs(v.conj() @ Hk.conj().T @ U[:, i]) ** 2
            interf = sum(powers[m] * abs(v.conj() @ Hk.conj().T @ U[:, m]) ** 2
                         for m in range(len(streams)) if m != i)
            noise = sigma2 * np.linalg.norm(v) ** 2
        else:
            u = U[:, i]
            sig = powers[i] * abs(u.conj() @ Hk @ v) ** 2
            interf = 0.0
            for m, (k2, j2) in enumerate(streams):
                if m != i:
                    interf += powers[m] * abs(u.conj() @ channels.H[k2] @ V[k2][:, j2]) ** 2
            noise = sigma2 * np.linalg.norm(u) ** 2
        out.append(sig / (interf + noise))
    return np.array(out)


def simplex_grid(n, total, step):
    """All points of {x >= 0, sum x = total} on a grid (n <= 3)."""
    m = int(round(total / step))
    for combo in itertools.product(range(m + 1), repeat=n - 1):
        if sum(combo) <= m:
            yield np.array(list(combo) + [m - sum(combo)]) * step


def bpsk_ber(gamma):
    return 0.5 * math.erfc(math.sqrt(gamma))
