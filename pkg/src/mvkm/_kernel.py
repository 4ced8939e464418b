"""Compiled SGD inner loop.

Operates on a packed view of the model: material axes of all views
concatenated (global material index), attempt biases as one row per
view, and record fields as flat arrays.  Semantics match the reference
gradients in :mod:`mvkm.train` exactly: per-record reconstruction and
regularizer terms, rank-based penalty over the ``m`` preceding
attempts, simultaneous update, then simplex projection of the touched
S row and Q column.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _project_simplex(v):
    n = v.size
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += u[i]
        if u[i] * (i + 1) > css - 1.0:
            theta = (css - 1.0) / (i + 1)
    return np.maximum(v - theta, 0.0)


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def sgd_pass(
    S,
    T,
    Qall,
    b_s,
    b_p,
    b_a,
    ba_row,
    mu_arr,
    s_arr,
    a_arr,
    r_arr,
    p_arr,
    x_arr,
    order,
    graded,
    gamma,
    eta,
    omega,
    lam_t,
    lam_s,
    m,
    constrain_s,
    update_globals,
):
    K = S.shape[1]
    C = T.shape[1]
    for idx in order:
        s = s_arr[idx]
        a = a_arr[idx]
        r = r_arr[idx]
        p = p_arr[idx]
        x = x_arr[idx]
        sv = S[s]
        qv = Qall[:, p].copy()
        Ta = T[:, :, a].copy()
        Taq = Ta @ qv
        z = sv @ Taq + b_s[s] + b_p[p] + b_a[ba_row[r], a]
        if graded[r]:
            coeff = 2.0 * gamma[r] * (z - x)
        else:
            sig = _sigmoid(z + mu_arr[0])
            coeff = 2.0 * gamma[r] * (sig - x) * sig * (1.0 - sig)
        g_s = coeff * Taq + 2.0 * lam_s * sv
        outer = np.outer(sv, qv)
        g_q = coeff * (Ta.T @ sv)
        g_t = coeff * outer + 2.0 * lam_t * Ta
        if omega > 0.0:
            lo = a - m
            if lo < 0:
                lo = 0
            for j in range(lo, a):
                diff = Ta - T[:, :, j].copy()
                d = sv @ (diff @ qv)
                pen = -omega * (1.0 - _sigmoid(d))
                g_s = g_s + pen * (diff @ qv)
                if update_globals:
                    g_t = g_t + pen * outer
                    # gradient w.r.t. the preceding slice is the negated term
                    for kk in range(K):
                        for cc in range(C):
                            T[kk, cc, j] += eta * pen * outer[kk, cc]
                    g_q = g_q + pen * (diff.T @ sv)
        new_s = sv - eta * g_s
        if constrain_s:
            new_s = _project_simplex(new_s)
        S[s] = new_s
        b_s[s] -= eta * coeff
        if update_globals:
            for kk in range(K):
                for cc in range(C):
                    T[kk, cc, a] -= eta * g_t[kk, cc]
            Qall[:, p] = _project_simplex(qv - eta * g_q)
            b_p[p] -= eta * coeff
            b_a[ba_row[r], a] -= eta * coeff
            if not graded[r]:
                mu_arr[0] -= eta * coeff
