"""Training protocol: weighted BCE, SGD/Adam, plateau LR decay, early
stopping, two-phase freeze/unfreeze and repeated stratified k-fold CV."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import DEFAULT_MAX_LEN, StatementPair, build_vocab, embeddings_for, encode_batch
from .errors import ConfigError, ContractError, DomainError
from .metrics import MetricsReport, aggregate, evaluate
from .models import Model, ModelConfig

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    lr_initial: float = 0.001
    optimizer: str = "sgd"
    es_patience_phase1: int = 10
    es_patience_phase2: int = 2
    plateau_patience: int = 3
    plateau_factor: float = 0.1
    folds: int = 5
    repetitions: int = 5
    val_fraction: float = 0.2
    seed: int = 0
    batch_size: int = 16
    max_epochs: int = 200
    momentum: float = 0.0
    two_phase: bool = True

    def validate(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if min(self.es_patience_phase1, self.es_patience_phase2, self.plateau_patience) < 1:
            raise ConfigError("patiences must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.folds < 2 or self.repetitions < 1:
            raise ConfigError("need folds >= 2 and repetitions >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr_initial <= 0:
            raise ConfigError("batch_size, max_epochs and lr_initial must be positive")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**data)


# ------------------------------------------------------------------ loss

@dataclass(frozen=True)
class ClassWeights:
    weight_truthful: float
    weight_deceptive: float

    def for_labels(self, labels) -> np.ndarray:
        y = np.asarray(labels)
        return np.where(y == 1, self.weight_deceptive, self.weight_truthful)


def class_weights(n_truthful: int, n_deceptive: int) -> ClassWeights:
    """Balanced weights ``n / (2 n_c)``: both classes carry equal total mass."""
    if n_truthful <= 0 or n_deceptive <= 0:
        raise DomainError("both classes need at least one example")
    n = n_truthful + n_deceptive
    return ClassWeights(n / (2.0 * n_truthful), n / (2.0 * n_deceptive))


def weighted_bce(prob: float, label: int, weights: ClassWeights) -> float:
    p = min(max(float(prob), PROB_CLAMP), 1.0 - PROB_CLAMP)
    w = weights.weight_deceptive if label == 1 else weights.weight_truthful
    return -w * (label * math.log(p) + (1 - label) * math.log(1.0 - p))


# ------------------------------------------------------------- optimizers

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: dict, optimizer: str, lr: float, momentum: float = 0.0) -> dict:
    """Update ``params`` in place. ``None`` gradients (frozen tensors) are skipped."""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    if optimizer == "adam":
        state["t"] = state.get("t", 0) + 1
        t = state["t"]
        c1 = 1.0 - ADAM_BETA1 ** t
        c2 = 1.0 - ADAM_BETA2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if p.shape != g.shape:
            raise ContractError(f"parameter {i}: shape {p.shape} but gradient {g.shape}")
        if optimizer == "sgd":
            if momentum:
                v = state.setdefault(("v", i), np.zeros_like(p))
                v *= momentum
                v -= lr * g
                p += v
            else:
                p -= lr * g
        elif optimizer == "adam":
            m = state.setdefault(("m", i), np.zeros_like(p))
            v = state.setdefault(("v", i), np.zeros_like(p))
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        else:
            raise ConfigError(f"unknown optimizer {optimizer!r}")
    return state


class Optimizer:
    """Stateful wrapper binding :func:`optimizer_step` to a fixed tensor list."""

    def __init__(self, tensors, kind: str = "sgd", momentum: float = 0.0):
        self.tensors = list(tensors)
        self.kind = kind
        self.momentum = momentum
        self.state: dict = {}

    def step(self, lr: float):
        grads = [t.grad if t.requires_grad else None for t in self.tensors]
        optimizer_step([t.data for t in self.tensors], grads, self.state, self.kind, lr, self.momentum)


# -------------------------------------------------------------- callbacks

class EpochMonitor:
    """Early stopping and plateau LR decay driven by validation loss.

    Improvement means strictly lower than the best seen so far; both
    counters reset on improvement.
    """

    def __init__(self, patience: int, plateau_patience: int, plateau_factor: float):
        self.patience = patience
        self.plateau_patience = plateau_patience
        self.plateau_factor = plateau_factor
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0
        self.plateau_wait = 0

    def update(self, epoch: int, val_loss: float, lr: float):
        """Return ``(improved, stop, next_lr)``."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.wait = 0
            self.plateau_wait = 0
            return True, False, lr
        self.wait += 1
        self.plateau_wait += 1
        if self.plateau_wait >= self.plateau_patience:
            lr = lr * self.plateau_factor
            self.plateau_wait = 0
        return False, self.wait >= self.patience, lr


# ------------------------------------------------------------------ data

@dataclass
class EncodedSet:
    """Model-ready arrays: ``inputs`` holds forward_batch keyword arrays."""

    inputs: Dict[str, np.ndarray]
    labels: np.ndarray

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, idx) -> "EncodedSet":
        return EncodedSet({k: v[idx] for k, v in self.inputs.items()}, self.labels[idx])


def encode_pairs(pairs: Sequence[StatementPair], vocab, config: ModelConfig, lexicon=None, embeddings=None) -> EncodedSet:
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    inputs: Dict[str, np.ndarray] = {}
    if config.external_embeddings:
        if embeddings is None:
            raise ConfigError("model uses external embeddings but none were supplied")
        (c, mc), (s, ms) = embeddings_for(pairs, embeddings, max(config.max_len_q1, config.max_len_q2))
        inputs.update(emb_q1=c, q1_mask=mc)
        if config.paired:
            inputs.update(emb_q2=s, q2_mask=ms)
    else:
        inputs["q1_ids"], inputs["q1_mask"] = encode_batch([p.q1 for p in pairs], vocab, config.max_len_q1)
        if config.paired:
            q2_ids, q2_mask = encode_batch([p.q2 for p in pairs], vocab, config.max_len_q2)
            # an empty second answer still needs one real position for attention
            empty = ~q2_mask.any(axis=1)
            q2_mask[empty, 0] = True
            inputs["q2_ids"], inputs["q2_mask"] = q2_ids, q2_mask
    if config.architecture == "coatt_liwc":
        if lexicon is None:
            raise ConfigError("coatt_liwc needs lexicon features")
        inputs["lexicon"] = np.asarray(lexicon, dtype=np.float64)
    return EncodedSet(inputs, labels)


def _batch_loss(model, batch: EncodedSet, weights: Optional[ClassWeights]):
    prob, _ = model.forward_batch(**batch.inputs)
    w = None if weights is None else weights.for_labels(batch.labels)
    return ad.binary_cross_entropy(prob, batch.labels, w, PROB_CLAMP)


def dataset_loss(model, data: EncodedSet, weights: Optional[ClassWeights] = None, batch_size: int = 256) -> float:
    total = 0.0
    with ad.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data.subset(slice(start, start + batch_size))
            total += float(_batch_loss(model, chunk, weights).data) * len(chunk)
    return total / len(data)


def predict(model, data: EncodedSet, batch_size: int = 256) -> np.ndarray:
    return model.predict_proba(batch_size=batch_size, **data.inputs)


# ------------------------------------------------------------------- fit

@dataclass
class History:
    records: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    final_lr: float = 0.0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.records)


def fit(
    model: Model,
    train_set: EncodedSet,
    val_set: EncodedSet,
    config: TrainConfig,
    phase: int = 1,
    lr: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    val_loss_fn: Optional[Callable[[Model], float]] = None,
) -> History:
    """Train one phase and restore the weights with the lowest validation loss.

    Phase 1 freezes the statement encoder and uses ``es_patience_phase1``;
    phase 2 trains everything with ``es_patience_phase2``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation splits must be non-empty")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    lr = config.lr_initial if lr is None else lr
    model.freeze_encoder(phase == 1)
    trainable = [t for t in model.parameters() if t.requires_grad]
    opt = Optimizer(trainable, config.optimizer, config.momentum)
    n_pos = int(train_set.labels.sum())
    weights = class_weights(len(train_set) - n_pos, n_pos) if 0 < n_pos < len(train_set) else None
    patience = config.es_patience_phase1 if phase == 1 else config.es_patience_phase2
    monitor = EpochMonitor(patience, config.plateau_patience, config.plateau_factor)
    val_loss_fn = val_loss_fn or (lambda m: dataset_loss(m, val_set))

    hist = History()
    best_state = model.state()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = train_set.subset(order[start:start + config.batch_size])
            for t in trainable:
                t.grad = None
            loss = _batch_loss(model, batch, weights)
            loss.backward()
            opt.step(lr)
            running += float(loss.data) * len(batch)
        val_loss = float(val_loss_fn(model))
        hist.records.append({"phase": phase, "epoch": epoch, "train_loss": running / len(train_set), "val_loss": val_loss, "lr": lr})
        improved, stop, lr = monitor.update(epoch, val_loss, lr)
        if improved:
            best_state = model.state()
        log.debug("phase %d epoch %d train %.4f val %.4f", phase, epoch, running / len(train_set), val_loss)
        if stop:
            hist.stopped_early = True
            break
    model.load_state(best_state)
    model.zero_grad()
    hist.best_epoch = monitor.best_epoch
    hist.best_val_loss = monitor.best
    hist.final_lr = lr
    return hist


def train_two_phase(model, train_set, val_set, config: TrainConfig, rng=None) -> List[History]:
    """Frozen-encoder phase, then (if there is an encoder) a full fine-tuning phase.

    Phase 2 starts again from ``lr_initial`` with fresh optimizer state.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    phases = [fit(model, train_set, val_set, config, phase=1, rng=rng)]
    if config.two_phase and model.encoder_layers:
        phases.append(fit(model, train_set, val_set, config, phase=2, rng=rng))
    model.freeze_encoder(False)
    model.trained = True
    return phases


# ------------------------------------------------------------------- CV

def stratified_folds(labels, k: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Partition indices into ``k`` folds; class counts per fold differ by at most one."""
    y = np.asarray(labels)
    classes = np.unique(y)
    for c in classes:
        if np.sum(y == c) < k:
            raise ConfigError(f"class {c} has {int(np.sum(y == c))} members, fewer than {k} folds")
    # deal each shuffled class round-robin, continuing where the previous class stopped
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in classes])
    assign = np.arange(order.size) % k
    return [np.sort(order[assign == f]) for f in range(k)]


def stratified_split(labels, val_fraction: float, rng: np.random.Generator):
    """Stratified train/validation split of ``range(len(labels))``."""
    y = np.asarray(labels)
    train, val = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_val = int(round(val_fraction * idx.size))
        n_val = min(max(n_val, 1), idx.size - 1) if idx.size > 1 else 0
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class RunResult:
    repetition: int
    fold: int
    seed: int
    metrics: MetricsReport
    epochs: List[int]
    final_lr: float
    n_train: int
    n_val: int
    n_test: int
    model: Optional[Model] = None
    vocab: Optional[object] = None
    lexicon_stats: Optional[dict] = None

    def ledger_entry(self) -> dict:
        return {
            "repetition": self.repetition,
            "fold": self.fold,
            "seed": self.seed,
            "epochs": self.epochs,
            "final_lr": self.final_lr,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "metrics": self.metrics.as_dict(),
        }


@dataclass
class CVResult:
    runs: List[RunResult]

    @property
    def rows(self) -> List[MetricsReport]:
        return [r.metrics for r in self.runs]

    def summary(self) -> MetricsReport:
        return aggregate(self.rows)


def _standardize(train_lex, other_lex):
    mu = train_lex.mean(axis=0)
    sd = train_lex.std(axis=0)
    sd[sd == 0] = 1.0
    return (train_lex - mu) / sd, [(x - mu) / sd for x in other_lex], {"mean": mu.tolist(), "std": sd.tolist()}


def run_fold(pairs, labels, train_pool, test_idx, model_config, train_config, seed, lexicon=None, embeddings=None):
    """Fit on ``train_pool`` (split again for validation) and score ``test_idx``."""
    rng = np.random.default_rng(seed)
    tr_rel, va_rel = stratified_split(labels[train_pool], train_config.val_fraction, rng)
    tr, va = train_pool[tr_rel], train_pool[va_rel]

    vocab = None
    cfg = dataclasses.replace(model_config)
    if not cfg.external_embeddings:
        # vocabulary from the training pool only (train + validation, never test)
        vocab = build_vocab([pairs[i].q1 for i in train_pool] + [pairs[i].q2 for i in train_pool if cfg.paired])
        cfg.vocab_size = len(vocab)

    lex_sets = [None, None, None]
    lex_stats = None
    if cfg.architecture == "coatt_liwc":
        lex = np.asarray(lexicon, dtype=np.float64)
        lex_tr, (lex_va, lex_te), lex_stats = _standardize(lex[tr], [lex[va], lex[test_idx]])
        lex_sets = [lex_tr, lex_va, lex_te]

    sets = [
        encode_pairs([pairs[i] for i in idx], vocab, cfg, lexicon=lx, embeddings=embeddings)
        for idx, lx in zip((tr, va, test_idx), lex_sets)
    ]
    model = Model(cfg, seed=seed)
    phases = train_two_phase(model, sets[0], sets[1], train_config, rng)
    scores = predict(model, sets[2])
    return model, vocab, phases, evaluate(scores, sets[2].labels), (len(tr), len(va), len(test_idx)), lex_stats


def cross_validate(
    dataset: Sequence[StatementPair],
    model_config: ModelConfig,
    train_config: TrainConfig,
    lexicon=None,
    embeddings=None,
    completed: Optional[Dict[tuple, dict]] = None,
    on_run: Optional[Callable[[RunResult], None]] = None,
    keep_models: bool = False,
) -> CVResult:
    """Repeated stratified k-fold cross-validation.

    Every repetition redraws the folds from its own seed. ``completed`` maps
    ``(repetition, fold)`` to a ledger entry from an earlier partial run;
    those runs are not refitted.
    """
    model_config = dataclasses.replace(model_config)
    if model_config.architecture == "coatt_liwc" and lexicon is not None and not model_config.lexicon_dim:
        model_config.lexicon_dim = int(np.asarray(lexicon).shape[1])
    # vocab_size is filled per fold; check everything else now
    dataclasses.replace(model_config, vocab_size=max(model_config.vocab_size, 2)).validate()
    train_config.validate()
    labels = np.array([p.label for p in dataset], dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ConfigError("dataset needs both classes")
    completed = completed or {}
    runs = []
    for rep in range(train_config.repetitions):
        folds = stratified_folds(labels, train_config.folds, np.random.default_rng(derive_seed(train_config.seed, rep)))
        for f, test_idx in enumerate(folds):
            seed = derive_seed(train_config.seed, rep, f)
            if (rep, f) in completed:
                e = completed[(rep, f)]
                runs.append(RunResult(rep, f, e["seed"], MetricsReport(**e["metrics"]), e["epochs"], e["final_lr"], e["n_train"], e["n_val"], e["n_test"]))
                continue
            train_pool = np.sort(np.concatenate([folds[j] for j in range(len(folds)) if j != f]))
            model, vocab, phases, row, sizes, lex_stats = run_fold(
                dataset, labels, train_pool, test_idx, model_config, train_config, seed, lexicon, embeddings
            )
            result = RunResult(
                rep, f, seed, row, [h.epochs for h in phases], phases[-1].final_lr, *sizes,
                model=model, vocab=vocab, lexicon_stats=lex_stats,
            )
            log.info("rep %d fold %d accuracy %.4f", rep, f, row.accuracy)
            if on_run is not None:
                on_run(result)
            if not keep_models:
                result.model = None
            runs.append(result)
    return CVResult(runs)
