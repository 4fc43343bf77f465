"""The six deception classifiers and their shared statement encoder.

Single-statement models read only the first answer::

    dense        encode(Q1) -> mean-pool -> dense stack -> sigmoid
    mha          encode(Q1) -> multi-head attention -> mean-pool -> ...
    transformer  encode(Q1) -> transformer encoder -> mean-pool -> ...

Paired models run one siamese encoder over both answers::

    coatt              co-attention(z) -> dense stack -> sigmoid
    coatt_liwc         z -> dense -> concat(lexicon features) -> dense -> sigmoid
    transformer_coatt  per-branch transformer encoder -> co-attention -> ...

The statement encoder (token embedding + fixed sinusoidal positions +
``base_layers`` transformer blocks) stands in for a pretrained language
model. With ``external_embeddings`` the encoder is dropped and callers
pass precomputed ``(d, N)`` matrices instead.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_layers, read_checkpoint, save_layers
from .coattention import CoAttentionOutput, coattend, init_coattention
from .errors import ConfigError, ContractError
from .layers import (
    LayerParams,
    dense,
    embed,
    init_dense,
    init_embedding,
    init_encoder_block,
    init_mha,
    multi_head_attention,
    transformer_encoder,
)

ARCHITECTURES = ("dense", "mha", "transformer", "coatt", "coatt_liwc", "transformer_coatt")
PAIRED = ("coatt", "coatt_liwc", "transformer_coatt")


@dataclass
class ModelConfig:
    architecture: str = "coatt"
    d: int = 48
    k: Optional[int] = None
    heads: int = 6
    encoder_layers: int = 6
    base_layers: int = 1
    head_widths: Tuple[int, ...] = (512, 128, 64)
    vocab_size: int = 0
    max_len_q1: int = 64
    max_len_q2: int = 64
    lexicon_dim: int = 0
    external_embeddings: bool = False

    def __post_init__(self):
        self.head_widths = tuple(int(w) for w in self.head_widths)

    @property
    def paired(self) -> bool:
        return self.architecture in PAIRED

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.d <= 0 or self.heads <= 0 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if not self.head_widths or min(self.head_widths) <= 0:
            raise ConfigError("head_widths must be a non-empty list of positive ints")
        if self.k is not None and self.k <= 0:
            raise ConfigError("k must be positive")
        if self.encoder_layers < 0 or self.base_layers < 0:
            raise ConfigError("layer counts must be >= 0")
        if self.architecture == "coatt_liwc":
            if self.lexicon_dim <= 0:
                raise ConfigError("coatt_liwc needs lexicon_dim > 0")
        elif self.lexicon_dim:
            raise ConfigError(f"lexicon_dim is only used by coatt_liwc, got {self.lexicon_dim} for {self.architecture}")
        if not self.external_embeddings and self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2 (pad and unknown ids are reserved)")
        return self

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["head_widths"] = list(self.head_widths)
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class ModelOutput:
    probability: float
    coattention: Optional[CoAttentionOutput] = None


@dataclass
class StatementEncoder:
    embedding: Optional[LayerParams]
    blocks: List[LayerParams] = field(default_factory=list)
    heads: int = 1

    @property
    def layers(self):
        return ([self.embedding] if self.embedding is not None else []) + list(self.blocks)

    def __call__(self, ids, mask) -> Tensor:
        return transformer_encoder(embed(ids, self.embedding), self.blocks, self.heads, mask)


def _head_layers(prefix, n_in, widths, rng):
    layers = []
    for i, w in enumerate(widths):
        layers.append(init_dense(f"{prefix}.dense{i}", n_in, w, rng))
        n_in = w
    layers.append(init_dense(f"{prefix}.out", n_in, 1, rng))
    return layers


def _run_head(x, layers):
    for lp in layers[:-1]:
        x = dense(x, lp, "relu")
    return dense(x, layers[-1], "sigmoid")


class Model:
    """An initialised classifier; see the module docstring for the wiring."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.trained = False
        rng = np.random.default_rng(seed)
        c = config
        if c.external_embeddings:
            self.encoder_q1 = None
        else:
            self.encoder_q1 = StatementEncoder(
                init_embedding("encoder.embedding", c.vocab_size, c.d, rng),
                [init_encoder_block(f"encoder.block{i}", c.d, c.heads, rng) for i in range(c.base_layers)],
                c.heads,
            )
        # siamese: the second statement goes through the very same encoder object
        self.encoder_q2 = self.encoder_q1 if c.paired else None

        self.mha = init_mha("mha", c.d, c.heads, rng) if c.architecture == "mha" else None
        self.transformer_q1: List[LayerParams] = []
        self.transformer_q2: List[LayerParams] = []
        if c.architecture == "transformer":
            self.transformer_q1 = [init_encoder_block(f"transformer.block{i}", c.d, c.heads, rng) for i in range(c.encoder_layers)]
        elif c.architecture == "transformer_coatt":
            self.transformer_q1 = [init_encoder_block(f"transformer_q1.block{i}", c.d, c.heads, rng) for i in range(c.encoder_layers)]
            self.transformer_q2 = [init_encoder_block(f"transformer_q2.block{i}", c.d, c.heads, rng) for i in range(c.encoder_layers)]

        self.coattention = init_coattention("coattention", c.d, c.k, rng) if c.paired else None

        if c.architecture == "coatt_liwc":
            pre_w, post_w = (c.head_widths[-2], c.head_widths[-1]) if len(c.head_widths) > 1 else (c.head_widths[0],) * 2
            self.head = [
                init_dense("head.pre", 2 * c.d, pre_w, rng),
                init_dense("head.post", pre_w + c.lexicon_dim, post_w, rng),
                init_dense("head.out", post_w, 1, rng),
            ]
        else:
            n_in = 2 * c.d if c.paired else c.d
            self.head = _head_layers("head", n_in, c.head_widths, rng)

    # ------------------------------------------------------------ params
    @property
    def encoder_layers(self) -> List[LayerParams]:
        return self.encoder_q1.layers if self.encoder_q1 is not None else []

    @property
    def layers(self) -> List[LayerParams]:
        out = list(self.encoder_layers)
        if self.mha is not None:
            out.append(self.mha)
        out += self.transformer_q1 + self.transformer_q2
        if self.coattention is not None:
            out.append(self.coattention)
        out += self.head
        return out

    def parameters(self) -> List[Tensor]:
        return [t for lp in self.layers for t in lp.weights.values()]

    def num_parameters(self) -> int:
        return sum(lp.num_parameters() for lp in self.layers)

    def freeze_encoder(self, frozen: bool = True):
        for lp in self.encoder_layers:
            lp.freeze(frozen)

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def state(self):
        """Copy of every parameter array, keyed by ``layer.param``."""
        return {f"{lp.name}.{k}": t.data.copy() for lp in self.layers for k, t in lp.weights.items()}

    def load_state(self, state):
        for lp in self.layers:
            for k, t in lp.weights.items():
                t.data[...] = state[f"{lp.name}.{k}"]

    # ----------------------------------------------------------- forward
    def _encode(self, encoder, ids, mask, emb):
        if emb is not None:
            x = emb if isinstance(emb, Tensor) else Tensor(np.asarray(emb, dtype=np.float64))
            if x.shape[-2] != self.config.d:
                raise ConfigError(f"embedding hidden size {x.shape[-2]} != model d={self.config.d}")
            return x
        if encoder is None:
            raise ContractError("model was built for external embeddings; pass emb_q1/emb_q2")
        if ids is None:
            raise ContractError("token ids are required")
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ContractError(f"token id out of range [0, {self.config.vocab_size})")
        return encoder(ids, mask)

    def forward_batch(
        self,
        q1_ids=None,
        q1_mask=None,
        q2_ids=None,
        q2_mask=None,
        lexicon=None,
        emb_q1=None,
        emb_q2=None,
    ) -> Tuple[Tensor, Optional[CoAttentionOutput]]:
        """Batched forward pass; returns deceptive-class probabilities of shape ``(B,)``."""
        c = self.config
        if q1_mask is None:
            q1_mask = (np.asarray(q1_ids) != 0) if q1_ids is not None else np.ones(np.shape(emb_q1)[:-2] + np.shape(emb_q1)[-1:], bool)
        C = self._encode(self.encoder_q1, q1_ids, q1_mask, emb_q1)
        co = None
        if not c.paired:
            if c.architecture == "mha":
                C = multi_head_attention(C, self.mha, c.heads, q1_mask)
            elif c.architecture == "transformer":
                C = transformer_encoder(C, self.transformer_q1, c.heads, q1_mask)
            h = ad.mean_pool(C, q1_mask)
            prob = _run_head(h, self.head)
        else:
            if q2_ids is None and emb_q2 is None:
                raise ContractError(f"{c.architecture} needs the second statement")
            if q2_mask is None:
                q2_mask = (np.asarray(q2_ids) != 0) if q2_ids is not None else np.ones(np.shape(emb_q2)[:-2] + np.shape(emb_q2)[-1:], bool)
            S = self._encode(self.encoder_q2, q2_ids, q2_mask, emb_q2)
            if c.architecture == "transformer_coatt":
                C = transformer_encoder(C, self.transformer_q1, c.heads, q1_mask)
                S = transformer_encoder(S, self.transformer_q2, c.heads, q2_mask)
            co = coattend(C, S, self.coattention, q1_mask, q2_mask)
            if c.architecture == "coatt_liwc":
                if lexicon is None:
                    raise ContractError("coatt_liwc needs lexicon features")
                lex = np.asarray(lexicon, dtype=np.float64)
                if lex.shape[-1] != c.lexicon_dim:
                    raise ContractError(f"lexicon features have length {lex.shape[-1]}, expected {c.lexicon_dim}")
                h = dense(co.z, self.head[0], "relu")
                lex = lex.reshape(h.shape[:-1] + (c.lexicon_dim,))
                h = ad.concat([h, Tensor(lex)], axis=-1)
                h = dense(h, self.head[1], "relu")
                prob = dense(h, self.head[2], "sigmoid")
            else:
                prob = _run_head(co.z, self.head)
        return ad.reshape(prob, prob.shape[:-2]), co

    def predict_proba(self, *args, batch_size: int = 256, **kwargs) -> np.ndarray:
        """Probabilities without graph recording, evaluated in chunks."""
        arrays = {k: v for k, v in kwargs.items() if v is not None}
        names = ["q1_ids", "q1_mask", "q2_ids", "q2_mask", "lexicon", "emb_q1", "emb_q2"]
        for name, val in zip(names, args):
            if val is not None:
                arrays[name] = val
        n = len(next(iter(arrays.values())))
        out = []
        with ad.no_grad():
            for start in range(0, n, batch_size):
                chunk = {k: np.asarray(v)[start:start + batch_size] for k, v in arrays.items()}
                out.append(self.forward_batch(**chunk)[0].data)
        return np.concatenate(out) if out else np.zeros(0)


def build(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed)


def forward(model: Model, q1_tokens, q2_tokens=None, lexicon_features=None, emb_q1=None, emb_q2=None) -> ModelOutput:
    """Score one statement pair (unbatched ids or ``(d, N)`` embeddings)."""
    def batch(x):
        return None if x is None else np.asarray(x)[None]

    prob, co = model.forward_batch(
        q1_ids=batch(q1_tokens),
        q2_ids=batch(q2_tokens) if model.config.paired else None,
        lexicon=batch(lexicon_features),
        emb_q1=batch(emb_q1),
        emb_q2=batch(emb_q2) if model.config.paired else None,
    )
    return ModelOutput(probability=float(prob.data[0]), coattention=co)


def save_model(model: Model, path, meta=None):
    info = {"config": model.config.to_dict(), "seed": model.seed, "trained": model.trained}
    info.update(meta or {})
    save_layers(path, model.layers, info)


def load_model(path) -> Tuple[Model, dict]:
    header, _ = read_checkpoint(path)
    meta = header["meta"]
    model = Model(ModelConfig.from_dict(meta["config"]), seed=meta.get("seed", 0))
    load_layers(path, model.layers)
    model.trained = bool(meta.get("trained", False))
    return model, meta
