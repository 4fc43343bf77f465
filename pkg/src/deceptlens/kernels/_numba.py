"""Loop kernels compiled with numba; same contracts as ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def scatter_add_rows(out, ids, rows):
    d = out.shape[1]
    for i in range(ids.shape[0]):
        r = ids[i]
        for j in range(d):
            out[r, j] += rows[i, j]
    return out


@njit(cache=True)
def softmax_rows(x):
    R, n = x.shape
    y = np.empty_like(x)
    for r in range(R):
        m = x[r, 0]
        for j in range(1, n):
            if x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(n):
            e = np.exp(x[r, j] - m)
            y[r, j] = e
            s += e
        for j in range(n):
            y[r, j] /= s
    return y


@njit(cache=True)
def softmax_rows_backward(y, gy):
    R, n = y.shape
    gx = np.empty_like(y)
    for r in range(R):
        dot = 0.0
        for j in range(n):
            dot += gy[r, j] * y[r, j]
        for j in range(n):
            gx[r, j] = y[r, j] * (gy[r, j] - dot)
    return gx


@njit(cache=True)
def layer_norm_cols(x, eps):
    B, d, N = x.shape
    xhat = np.empty_like(x)
    inv_std = np.empty((B, 1, N))
    for b in range(B):
        for t in range(N):
            mu = 0.0
            for i in range(d):
                mu += x[b, i, t]
            mu /= d
            var = 0.0
            for i in range(d):
                c = x[b, i, t] - mu
                var += c * c
            var /= d
            s = 1.0 / np.sqrt(var + eps)
            inv_std[b, 0, t] = s
            for i in range(d):
                xhat[b, i, t] = (x[b, i, t] - mu) * s
    return xhat, inv_std


@njit(cache=True)
def layer_norm_cols_backward(g, xhat, inv_std):
    B, d, N = g.shape
    gx = np.empty_like(g)
    for b in range(B):
        for t in range(N):
            gm = 0.0
            gxm = 0.0
            for i in range(d):
                gm += g[b, i, t]
                gxm += g[b, i, t] * xhat[b, i, t]
            gm /= d
            gxm /= d
            s = inv_std[b, 0, t]
            for i in range(d):
                gx[b, i, t] = s * (g[b, i, t] - gm - xhat[b, i, t] * gxm)
    return gx


@njit(cache=True)
def _midranks_sorted(xs):
    n = xs.shape[0]
    out = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        avg = (i + j + 2) / 2.0
        for k in range(i, j + 1):
            out[k] = avg
        i = j + 1
    return out


def midranks(x):
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    ranks[order] = _midranks_sorted(x[order])
    return ranks
