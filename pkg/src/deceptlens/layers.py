"""Neural building blocks on top of :mod:`deceptlens.autodiff`.

Sequence tensors use the column layout ``(..., d, N)``: features along
rows, one column per token. Dense layers act on row vectors ``(..., in)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

LN_EPS = 1e-5


@dataclass
class LayerParams:
    name: str
    weights: Dict[str, Tensor] = field(default_factory=dict)
    frozen: bool = False

    def __getitem__(self, key) -> Tensor:
        return self.weights[key]

    def add(self, key: str, value: np.ndarray) -> Tensor:
        if key in self.weights:
            raise ConfigError(f"duplicate parameter {key!r} in layer {self.name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=not self.frozen, name=f"{self.name}.{key}")
        self.weights[key] = t
        return t

    def freeze(self, frozen: bool = True):
        self.frozen = frozen
        for t in self.weights.values():
            t.requires_grad = not frozen
            if frozen:
                t.grad = None

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self.weights.values()]))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ------------------------------------------------------------------ dense

def init_dense(name: str, n_in: int, n_out: int, rng) -> LayerParams:
    p = LayerParams(name)
    p.add("W", glorot(rng, n_in, n_out, (n_in, n_out)))
    p.add("b", np.zeros(n_out))
    return p


def dense(x: Tensor, params: LayerParams, activation: Optional[str] = "linear") -> Tensor:
    W = params["W"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense {params.name!r}: input width {x.shape[-1]} but weights are {W.shape}")
    return ad.elementwise(activation, ad.matmul(x, W) + params["b"])


# -------------------------------------------------------------- attention

def init_mha(name: str, d: int, heads: int, rng) -> LayerParams:
    if heads <= 0 or d % heads:
        raise ConfigError(f"hidden size {d} is not divisible by {heads} heads")
    p = LayerParams(name)
    for key in ("q", "k", "v", "o"):
        p.add(f"W{key}", glorot(rng, d, d, (d, d)))
        p.add(f"b{key}", np.zeros((d, 1)))
    return p


def multi_head_attention(x: Tensor, params: LayerParams, heads: int, mask=None, return_attention: bool = False):
    """Scaled dot-product self-attention over the columns of ``x``.

    ``mask`` has shape ``(..., N)``; padded key positions are excluded from
    every query's softmax. With ``return_attention`` the per-head weights
    ``(..., heads, N, N)`` (rows = queries) are returned as well.
    """
    d, n = x.shape[-2:]
    if heads <= 0 or d % heads:
        raise ConfigError(f"hidden size {d} is not divisible by {heads} heads")
    dh = d // heads
    lead = x.shape[:-2]
    split = lead + (heads, dh, n)

    q = ad.reshape(ad.matmul(params["Wq"], x) + params["bq"], split)
    k = ad.reshape(ad.matmul(params["Wk"], x) + params["bk"], split)
    v = ad.reshape(ad.matmul(params["Wv"], x) + params["bv"], split)

    scores = ad.mul(ad.matmul(ad.transpose(q), k), 1.0 / np.sqrt(dh))
    key_mask = None
    if mask is not None:
        key_mask = np.asarray(mask, dtype=bool)[..., None, None, :]
    attn = ad.softmax(scores, mask=key_mask)
    ctx = ad.reshape(ad.matmul(v, ad.transpose(attn)), lead + (d, n))
    out = ad.matmul(params["Wo"], ctx) + params["bo"]
    if return_attention:
        return out, attn
    return out


# ------------------------------------------------------------ transformer

def init_encoder_block(name: str, d: int, heads: int, rng, ff_mult: int = 4) -> LayerParams:
    p = init_mha(name, d, heads, rng)
    p.add("ln1_g", np.ones((d, 1)))
    p.add("ln1_b", np.zeros((d, 1)))
    p.add("W1", glorot(rng, d, ff_mult * d, (ff_mult * d, d)))
    p.add("b1", np.zeros((ff_mult * d, 1)))
    p.add("W2", glorot(rng, ff_mult * d, d, (d, ff_mult * d)))
    p.add("b2", np.zeros((d, 1)))
    p.add("ln2_g", np.ones((d, 1)))
    p.add("ln2_b", np.zeros((d, 1)))
    return p


def encoder_block(x: Tensor, p: LayerParams, heads: int, mask=None) -> Tensor:
    """Post-norm block: ``LN(x + MHA(x))`` then ``LN(h + FFN(h))``."""
    h = ad.layer_norm(x + multi_head_attention(x, p, heads, mask), p["ln1_g"], p["ln1_b"], LN_EPS)
    ff = ad.relu(ad.matmul(p["W1"], h) + p["b1"])
    ff = ad.matmul(p["W2"], ff) + p["b2"]
    return ad.layer_norm(h + ff, p["ln2_g"], p["ln2_b"], LN_EPS)


def transformer_encoder(x: Tensor, blocks, heads: int, mask=None) -> Tensor:
    """Apply a stack of encoder blocks (a list of LayerParams); empty stack is identity."""
    for p in blocks:
        x = encoder_block(x, p, heads, mask)
    return x


def sinusoidal_positions(d: int, n: int) -> np.ndarray:
    """Fixed position codes laid out as ``(d, n)``."""
    pos = np.arange(n)[None, :]
    i = np.arange(d)[:, None]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_embedding(name: str, vocab_size: int, d: int, rng) -> LayerParams:
    # a lookup is a one-hot product, so the effective fan-in is 1
    p = LayerParams(name)
    p.add("table", glorot(rng, 1, d, (vocab_size, d)))
    return p


def embed(ids, p: LayerParams) -> Tensor:
    """Token ids ``(..., L)`` -> ``sqrt(d) * embedding + position``, laid out ``(..., d, L)``."""
    e = ad.embedding(p["table"], ids)
    d, n = e.shape[-2:]
    return ad.mul(e, np.sqrt(d)) + Tensor(sinusoidal_positions(d, n))
