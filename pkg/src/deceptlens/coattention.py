"""Co-attention fusion of two encoded statements.

Given encodings ``C`` (d x N, first statement) and ``S`` (d x T, second
statement)::

    F   = tanh(C^T W_l S)                  affinity, N x T
    H_s = tanh(W_s S + (W_c C) F)          k x T
    H_c = tanh(W_c C + (W_s S) F^T)        k x N
    a_s = softmax(w_hs^T H_s)              1 x T
    a_c = softmax(w_hc^T H_c)              1 x N
    s^  = sum_i a_s[i] S[:, i]             1 x d
    c^  = sum_j a_c[j] C[:, j]             1 x d
    z   = [s^, c^]                         1 x 2d

No bias terms. Padding columns are zeroed before the affinity and masked
out of both softmaxes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError, ShapeError
from .layers import LayerParams, glorot

PARAM_NAMES = ("W_l", "W_s", "W_c", "w_hs", "w_hc")


class CoAttentionParams(LayerParams):
    """Parameter set ``W_l (d x d)``, ``W_s, W_c (k x d)``, ``w_hs, w_hc (k x 1)``."""

    @property
    def d(self) -> int:
        return self["W_l"].shape[0]

    @property
    def k(self) -> int:
        return self["W_s"].shape[0]

    def validate(self):
        missing = [n for n in PARAM_NAMES if n not in self.weights]
        if missing:
            raise ShapeError(f"co-attention params missing {missing}")
        d, k = self.d, self.k
        expected = {"W_l": (d, d), "W_s": (k, d), "W_c": (k, d), "w_hs": (k, 1), "w_hc": (k, 1)}
        for name, shape in expected.items():
            if self[name].shape != shape:
                raise ShapeError(f"co-attention {name}: expected {shape}, got {self[name].shape}")


def init_coattention(name: str, d: int, k: int | None, rng) -> CoAttentionParams:
    k = d if k is None else k
    p = CoAttentionParams(name)
    p.add("W_l", glorot(rng, d, d, (d, d)))
    p.add("W_s", glorot(rng, d, k, (k, d)))
    p.add("W_c", glorot(rng, d, k, (k, d)))
    p.add("w_hs", glorot(rng, k, 1, (k, 1)))
    p.add("w_hc", glorot(rng, k, 1, (k, 1)))
    return p


@dataclass
class CoAttentionOutput:
    F: Tensor
    a_s: Tensor
    a_c: Tensor
    s_hat: Tensor
    c_hat: Tensor
    z: Tensor


def _check_mask(mask, n, lead, label):
    if mask is None:
        return np.ones(lead + (n,), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] != n:
        raise ShapeError(f"{label} mask has length {mask.shape[-1]}, expected {n}")
    if not np.all(mask.any(axis=-1)):
        raise DomainError(f"{label}: statement consists only of padding")
    return mask


def coattend(C: Tensor, S: Tensor, params: CoAttentionParams, mask_c=None, mask_s=None) -> CoAttentionOutput:
    """Fuse ``C (.., d, N)`` and ``S (.., d, T)`` into ``z (.., 1, 2d)``."""
    params.validate()
    d = params.d
    if C.shape[-2] != d or S.shape[-2] != d:
        raise ShapeError(f"co-attention hidden size mismatch: C {C.shape}, S {S.shape}, W_l {params['W_l'].shape}")
    n, t = C.shape[-1], S.shape[-1]
    mask_c = _check_mask(mask_c, n, C.shape[:-2], "first statement")
    mask_s = _check_mask(mask_s, t, S.shape[:-2], "second statement")

    if not mask_c.all():
        C = ad.mul(C, mask_c[..., None, :].astype(np.float64))
    if not mask_s.all():
        S = ad.mul(S, mask_s[..., None, :].astype(np.float64))

    F = ad.tanh(ad.matmul(ad.matmul(ad.transpose(C), params["W_l"]), S))
    wc_c = ad.matmul(params["W_c"], C)
    ws_s = ad.matmul(params["W_s"], S)
    H_s = ad.tanh(ws_s + ad.matmul(wc_c, F))
    H_c = ad.tanh(wc_c + ad.matmul(ws_s, ad.transpose(F)))

    a_s = ad.softmax(ad.matmul(ad.transpose(params["w_hs"]), H_s), mask=mask_s[..., None, :])
    a_c = ad.softmax(ad.matmul(ad.transpose(params["w_hc"]), H_c), mask=mask_c[..., None, :])

    # elementwise product + last-axis reduction keeps numpy's pairwise summation
    s_hat = ad.transpose(ad.sum(ad.mul(S, a_s), axis=-1, keepdims=True))
    c_hat = ad.transpose(ad.sum(ad.mul(C, a_c), axis=-1, keepdims=True))
    z = ad.concat([s_hat, c_hat], axis=-1)
    return CoAttentionOutput(F=F, a_s=a_s, a_c=a_c, s_hat=s_hat, c_hat=c_hat, z=z)


def swapped_roles(params: CoAttentionParams) -> CoAttentionParams:
    """Parameters that make ``coattend(S, C)`` mirror ``coattend(C, S)``."""
    q = CoAttentionParams(params.name + ".swapped")
    q.add("W_l", params["W_l"].data.T.copy())
    q.add("W_s", params["W_c"].data.copy())
    q.add("W_c", params["W_s"].data.copy())
    q.add("w_hs", params["w_hc"].data.copy())
    q.add("w_hc", params["w_hs"].data.copy())
    return q


def coattend_gradcheck(d: int, N: int, T: int, k: int, seed: int, step: float = 1e-5) -> float:
    """Max relative error of backprop vs central differences over all inputs and weights."""
    rng = np.random.default_rng(seed)
    params = init_coattention("coatt", d, k, rng)
    C = Tensor(rng.normal(size=(d, N)), name="C")
    S = Tensor(rng.normal(size=(d, T)), name="S")
    probe = rng.normal(size=(1, 2 * d))

    def loss():
        return ad.sum(ad.mul(coattend(C, S, params).z, probe))

    errs = ad.gradcheck(loss, [params[n] for n in PARAM_NAMES] + [C, S], step=step)
    return max(errs.values())
