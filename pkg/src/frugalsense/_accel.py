"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``FRUGALSENSE_NO_NUMBA=1`` to force the numpy implementations (useful
for debugging, profiling and for platforms without numba). Both paths are
expected to agree to floating-point round-off; the test-suite checks this.
"""
import os

import numpy as np

_DISABLED = os.environ.get("FRUGALSENSE_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    USE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag
    USE_NUMBA = False

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)

# smoothness codes: 0 -> nu=1/2, 1 -> nu=3/2, 2 -> nu=5/2


# ---------------------------------------------------------------- numpy ---

def _pairwise_dist_np(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def matern_gram_np(A, B, variance, length_scale, code):
    r = _pairwise_dist_np(A, B) / length_scale
    if code == 0:
        return variance * np.exp(-r)
    if code == 1:
        s = SQRT3 * r
        return variance * (1.0 + s) * np.exp(-s)
    s = SQRT5 * r
    return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def periodic_gram_np(ta, tb, variance, length_scale, period):
    d = np.abs(ta[:, None] - tb[None, :])
    s = np.sin(np.pi * d / period)
    return variance * np.exp(-2.0 * s * s / (length_scale * length_scale))


def combined_gram_np(MA, MB, ta, tb, mvar, mls, code, pvar, pls, period, sym):
    return (matern_gram_np(MA, MB, mvar, mls, code)
            + periodic_gram_np(ta, tb, pvar, pls, period))


def condition_block_np(mean, cov, idx, y, noise):
    """Rank-1 Gaussian conditioning of a block posterior, in place."""
    c = cov[:, idx].copy()
    denom = c[idx] + noise
    mean += c * ((y - mean[idx]) / denom)
    cov -= np.outer(c, c) / denom


def fi_after_each_np(cov, obs_noise, pred_noise, cand, span):
    """Mean predictive precision over ``span`` after observing each candidate."""
    var = np.diag(cov)[span]
    sub = cov[np.ix_(span, cand)]
    denom = np.diag(cov)[cand] + obs_noise
    new_var = var[:, None] - sub * sub / denom[None, :]
    new_var = np.maximum(new_var, 0.0) + pred_noise
    new_var = np.maximum(new_var, 1e-12)
    return np.mean(1.0 / new_var, axis=0)


def gae_np(rewards, values, dones, next_values, gamma, lam):
    n = rewards.shape[0]
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv


# ---------------------------------------------------------------- numba ---

if USE_NUMBA:

    @njit(cache=True)
    def matern_gram_nb(A, B, variance, length_scale, code):
        na, nb, dim = A.shape[0], B.shape[0], A.shape[1]
        out = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                for k in range(dim):
                    diff = A[i, k] - B[j, k]
                    acc += diff * diff
                r = np.sqrt(acc) / length_scale
                if code == 0:
                    out[i, j] = variance * np.exp(-r)
                elif code == 1:
                    s = SQRT3 * r
                    out[i, j] = variance * (1.0 + s) * np.exp(-s)
                else:
                    s = SQRT5 * r
                    out[i, j] = variance * (1.0 + s + s * s / 3.0) * np.exp(-s)
        return out

    @njit(cache=True)
    def periodic_gram_nb(ta, tb, variance, length_scale, period):
        na, nb = ta.shape[0], tb.shape[0]
        out = np.empty((na, nb))
        inv_l2 = 1.0 / (length_scale * length_scale)
        for i in range(na):
            for j in range(nb):
                s = np.sin(np.pi * abs(ta[i] - tb[j]) / period)
                out[i, j] = variance * np.exp(-2.0 * s * s * inv_l2)
        return out

    @njit(cache=True)
    def combined_gram_nb(MA, MB, ta, tb, mvar, mls, code, pvar, pls, period, sym):
        na, nb, dim = MA.shape[0], MB.shape[0], MA.shape[1]
        out = np.empty((na, nb))
        inv_l2 = 1.0 / (pls * pls)
        for i in range(na):
            j0 = i if sym else 0
            for j in range(j0, nb):
                acc = 0.0
                for k in range(dim):
                    diff = MA[i, k] - MB[j, k]
                    acc += diff * diff
                r = np.sqrt(acc) / mls
                if code == 0:
                    km = mvar * np.exp(-r)
                elif code == 1:
                    q = SQRT3 * r
                    km = mvar * (1.0 + q) * np.exp(-q)
                else:
                    q = SQRT5 * r
                    km = mvar * (1.0 + q + q * q / 3.0) * np.exp(-q)
                sn = np.sin(np.pi * abs(ta[i] - tb[j]) / period)
                v = km + pvar * np.exp(-2.0 * sn * sn * inv_l2)
                out[i, j] = v
                if sym:
                    out[j, i] = v
        return out

    @njit(cache=True)
    def condition_block_nb(mean, cov, idx, y, noise):
        m = mean.shape[0]
        c = cov[:, idx].copy()
        denom = c[idx] + noise
        gain = (y - mean[idx]) / denom
        for i in range(m):
            mean[i] += c[i] * gain
        for i in range(m):
            ci = c[i] / denom
            for j in range(m):
                cov[i, j] -= ci * c[j]

    @njit(cache=True)
    def fi_after_each_nb(cov, obs_noise, pred_noise, cand, span):
        nc, ns = cand.shape[0], span.shape[0]
        out = np.empty(nc)
        for a in range(nc):
            c = cand[a]
            denom = cov[c, c] + obs_noise
            acc = 0.0
            for b in range(ns):
                s = span[b]
                v = cov[s, s] - cov[s, c] * cov[s, c] / denom
                if v < 0.0:
                    v = 0.0
                v += pred_noise
                if v < 1e-12:
                    v = 1e-12
                acc += 1.0 / v
            out[a] = acc / ns
        return out

    @njit(cache=True)
    def gae_nb(rewards, values, dones, next_values, gamma, lam):
        n = rewards.shape[0]
        adv = np.zeros(n)
        last = 0.0
        for t in range(n - 1, -1, -1):
            nonterminal = 1.0 - dones[t]
            delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
            last = delta + gamma * lam * nonterminal * last
            adv[t] = last
        return adv

    matern_gram = matern_gram_nb
    periodic_gram = periodic_gram_nb
    combined_gram = combined_gram_nb
    condition_block = condition_block_nb
    fi_after_each = fi_after_each_nb
    gae = gae_nb
else:
    matern_gram = matern_gram_np
    periodic_gram = periodic_gram_np
    combined_gram = combined_gram_np
    condition_block = condition_block_np
    fi_after_each = fi_after_each_np
    gae = gae_np
