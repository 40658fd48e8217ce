"""Compiled inner loop of the stacked iteration for affine games.

Semantically identical to ``StackedOperator.apply`` followed by the
per-round diagnostics of ``engine.run``; cross-checked in the tests.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _pair_max(V):
    N, d = V.shape
    best = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            s = 0.0
            for k in range(d):
                t = V[i, k] - V[j, k]
                s += t * t
            if s > best:
                best = s
    return np.sqrt(best)


@njit(cache=True)
def affine_rounds(X, Z, Lam, L, Q, h, A, bb, b, lo, hi, owner, offsets, tau, nu, sigma, c,
                  full_info, tol, kkt_tol, max_steps, cons, spread, kkt, stepn, pos):
    """Advance ``(X, Z, Lam)`` in place by up to ``max_steps`` rounds.

    Diagnostics of round ``pos + t + 1`` go to index ``pos + t + 1`` of the
    output arrays. Returns ``(rounds_done, status)`` with status 1 when the
    stop rule fired, -1 on a non-finite iterate and 0 otherwise.
    """
    N, n = X.shape
    m = Z.shape[1]
    Xe = np.empty((N, n))
    Xn = np.empty((N, n))
    Zn = np.empty((N, m))
    Ln = np.empty((N, m))
    LX = np.empty((N, n))
    LLam = np.empty((N, m))
    x = np.empty(n)
    xn = np.empty(n)
    lam_bar = np.empty(m)
    for it in range(max_steps):
        for j in range(n):
            x[j] = X[owner[j], j]
        for i in range(N):
            for j in range(n):
                Xe[i, j] = x[j] if full_info else X[i, j]
        for i in range(N):
            for j in range(n):
                s = 0.0
                for l in range(N):
                    s += L[i, l] * Xe[l, j]
                LX[i, j] = s
            for k in range(m):
                s = 0.0
                for l in range(N):
                    s += L[i, l] * Lam[l, k]
                LLam[i, k] = s
        for j in range(n):
            i = owner[j]
            g = h[j]
            for l in range(n):
                g += Q[j, l] * Xe[i, l]
            for k in range(m):
                g += A[k, j] * Lam[i, k]
            v = x[j] - tau[i] * (g + c * LX[i, j])
            if v < lo[j]:
                v = lo[j]
            elif v > hi[j]:
                v = hi[j]
            xn[j] = v
        for i in range(N):
            for j in range(n):
                Xn[i, j] = Xe[i, j] - tau[i] * c * LX[i, j]
        for j in range(n):
            Xn[owner[j], j] = xn[j]
        for i in range(N):
            for k in range(m):
                Zn[i, k] = Z[i, k] + nu[i] * LLam[i, k]
        for i in range(N):
            for k in range(m):
                ax = 0.0
                for j in range(offsets[i], offsets[i + 1]):
                    ax += A[k, j] * (2.0 * xn[j] - x[j])
                dz = 0.0
                for l in range(N):
                    dz += L[i, l] * (2.0 * Zn[l, k] - Z[l, k])
                v = Lam[i, k] + sigma[i] * (ax - bb[i, k] - dz - LLam[i, k])
                Ln[i, k] = v if v > 0.0 else 0.0

        step = 0.0
        finite = True
        for i in range(N):
            for j in range(n):
                t = Xn[i, j] - X[i, j]
                step += t * t
            for k in range(m):
                t = Zn[i, k] - Z[i, k]
                step += t * t
                t = Ln[i, k] - Lam[i, k]
                step += t * t
        if not np.isfinite(step):
            finite = False
        if not finite:
            return it, -1
        step = np.sqrt(step)
        X[:, :] = Xn
        Z[:, :] = Zn
        Lam[:, :] = Ln

        # diagnostics at the true decisions and the mean multiplier
        for k in range(m):
            s = 0.0
            for i in range(N):
                s += Lam[i, k]
            lam_bar[k] = s / N
        stat = 0.0
        for j in range(n):
            g = h[j]
            for l in range(n):
                g += Q[j, l] * xn[l]
            for k in range(m):
                g += A[k, j] * lam_bar[k]
            v = xn[j] - g
            if v < lo[j]:
                v = lo[j]
            elif v > hi[j]:
                v = hi[j]
            t = xn[j] - v
            stat += t * t
        viol = 0.0
        comp = 0.0
        for k in range(m):
            s = -b[k]
            for j in range(n):
                s += A[k, j] * xn[j]
            if s > 0.0:
                viol += s * s
            comp += abs(lam_bar[k] * s)
        r = np.sqrt(stat)
        if np.sqrt(viol) > r:
            r = np.sqrt(viol)
        if comp > r:
            r = comp
        q = pos + it + 1
        cons[q] = _pair_max(X)
        spread[q] = _pair_max(Lam)
        kkt[q] = r
        stepn[q] = step
        worst = max(cons[q], spread[q], step)
        if worst < tol and (kkt_tol < 0.0 or r < kkt_tol):
            return it + 1, 1
    return max_steps, 0
