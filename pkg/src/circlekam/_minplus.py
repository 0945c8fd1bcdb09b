"""Compiled min-plus primitives shared by the kernel, barrier and connect code.

All routines take float64 arrays and return fresh arrays. Ties are broken
toward the smallest index, which keeps backtracking reproducible.
"""
import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True)
def minplus_product(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.full((n, p), np.inf)
    arg = np.zeros((n, p), dtype=np.int64)
    for i in range(n):
        row = out[i]
        ar = arg[i]
        for j in range(m):
            aij = a[i, j]
            if aij == np.inf:
                continue
            bj = b[j]
            for k in range(p):
                v = aij + bj[k]
                if v < row[k]:
                    row[k] = v
                    ar[k] = j
    return out, arg


@njit(cache=True)
def minplus_product_values(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.full((n, p), np.inf)
    for i in range(n):
        row = out[i]
        for j in range(m):
            aij = a[i, j]
            if aij == np.inf:
                continue
            bj = b[j]
            for k in range(p):
                v = aij + bj[k]
                if v < row[k]:
                    row[k] = v
    return out


@njit(cache=True)
def vec_matrix(u, a):
    """(u ⊗ A)(j) = min_i u(i) + A(i, j), with argmin i."""
    n, p = a.shape
    out = np.full(p, np.inf)
    arg = np.zeros(p, dtype=np.int64)
    for i in range(n):
        ui = u[i]
        if ui == np.inf:
            continue
        ai = a[i]
        for k in range(p):
            v = ui + ai[k]
            if v < out[k]:
                out[k] = v
                arg[k] = i
    return out, arg


@njit(cache=True)
def matrix_vec(a, u):
    """(A ⊗ u)(i) = min_j A(i, j) + u(j), with argmin j."""
    n, p = a.shape
    out = np.full(n, np.inf)
    arg = np.zeros(n, dtype=np.int64)
    for i in range(n):
        ai = a[i]
        best = np.inf
        bj = 0
        for j in range(p):
            v = ai[j] + u[j]
            if v < best:
                best = v
                bj = j
        out[i] = best
        arg[i] = bj
    return out, arg


@njit(cache=True)
def karp_min_cycle_mean(w):
    """Minimum cycle mean of a dense weighted digraph (Karp 1978).

    Uses a virtual source joined to every node with weight 0, so every
    cycle is reachable.
    """
    n = w.shape[0]
    d = np.full((n + 1, n), np.inf)
    for v in range(n):
        d[0, v] = 0.0
    for k in range(1, n + 1):
        prev = d[k - 1]
        cur = d[k]
        for i in range(n):
            pi = prev[i]
            if pi == np.inf:
                continue
            wi = w[i]
            for j in range(n):
                v = pi + wi[j]
                if v < cur[j]:
                    cur[j] = v
    best = np.inf
    for v in range(n):
        if d[n, v] == np.inf:
            continue
        worst = -np.inf
        for k in range(n):
            if d[k, v] == np.inf:
                continue
            val = (d[n, v] - d[k, v]) / (n - k)
            if val > worst:
                worst = val
        if worst < best:
            best = worst
    return best


@njit(cache=True)
def lifted_step(u, blocks, mvals, shift):
    """One substep of the winding-resolved Bellman relaxation.

    ``u[w, i]`` is the value at lift ``w`` (relative to a window origin)
    of grid node ``i``; ``blocks[k, i, j]`` is the block action from
    ``i`` to ``j`` with winding ``mvals[k]``. ``shift`` re-centres the
    window after the step (new index = old index + m - shift).
    Returns the relaxed array and, for each (w, j), the predecessor flat
    index ``w_old * n + i``.
    """
    nw, n = u.shape
    nb = blocks.shape[0]
    out = np.full((nw, n), np.inf)
    pred = np.full((nw, n), -1, dtype=np.int64)
    for w in range(nw):
        uw = u[w]
        for b in range(nb):
            w2 = w + mvals[b] - shift
            if w2 < 0 or w2 >= nw:
                continue
            blk = blocks[b]
            ow = out[w2]
            pw = pred[w2]
            for i in range(n):
                ui = uw[i]
                if ui == np.inf:
                    continue
                bi = blk[i]
                for j in range(n):
                    v = ui + bi[j]
                    if v < ow[j]:
                        ow[j] = v
                        pw[j] = w * n + i
    return out, pred


@njit(cache=True)
def lifted_step_back(u, blocks, mvals, shift):
    """Backward counterpart of :func:`lifted_step`.

    ``out[w, i] = min_{b, j} blocks[b, i, j] + u[w + m_b - shift, j]``.
    """
    nw, n = u.shape
    nb = blocks.shape[0]
    out = np.full((nw, n), np.inf)
    for w in range(nw):
        ow = out[w]
        for b in range(nb):
            w2 = w + mvals[b] - shift
            if w2 < 0 or w2 >= nw:
                continue
            u2 = u[w2]
            blk = blocks[b]
            for i in range(n):
                bi = blk[i]
                best = ow[i]
                for j in range(n):
                    v = bi[j] + u2[j]
                    if v < best:
                        best = v
                ow[i] = best
    return out


@njit(cache=True)
def calibration_defect(h, aubry_idx):
    """min over Aubry pairs (y, y') of h[y, x] + h[x, y'] - h[y, y']."""
    n = h.shape[0]
    na = aubry_idx.shape[0]
    out = np.full(n, np.inf)
    for x in range(n):
        best = np.inf
        for a in range(na):
            y = aubry_idx[a]
            hyx = h[y, x]
            for b in range(na):
                yp = aubry_idx[b]
                v = hyx + h[x, yp] - h[y, yp]
                if v < best:
                    best = v
        out[x] = best
    return out
