"""Vectorised numpy implementations of the hot kernels.

Every function here has a loop-based twin in ``_numba``; both must agree
to round-off and are cross-checked in the test suite.
"""
import numpy as np


def scatter_add_rows(out, ids, rows):
    """``out[ids[i]] += rows[i]`` with repeated ids accumulated, in place."""
    np.add.at(out, ids, rows)
    return out


def softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def layer_norm_cols(x, eps):
    """Normalise each column of every (d, N) slice of a (B, d, N) array."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return xc * inv_std, inv_std


def layer_norm_cols_backward(g, xhat, inv_std):
    gm = g.mean(axis=1, keepdims=True)
    gxm = (g * xhat).mean(axis=1, keepdims=True)
    return inv_std * (g - gm - xhat * gxm)


def midranks(x):
    """1-based ranks of ``x`` with tied values sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = xs.size
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0
    ranks_sorted = np.repeat(avg, ends - starts)
    ranks = np.empty(n)
    ranks[order] = ranks_sorted
    return ranks
