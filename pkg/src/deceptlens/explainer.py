"""Local surrogate explanations: drop tokens, re-score, fit a weighted sparse linear model.

Positive weights push a prediction towards *deceptive*, negative ones
towards *truthful*. Dropped tokens are deleted from the statement, not
replaced by an unknown-token id.
"""
from __future__ import annotations

import html
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import PAD_ID, StatementPair, Vocabulary
from .errors import ContractError, DomainError
from .text import tokenize

CLASS_NAMES = ("truthful", "deceptive")
KERNEL_WIDTH = 0.75
RIDGE = 1e-3
MAX_FEATURES = 10
DEFAULT_SAMPLES = 5000
TARGETS = ("q1", "q2", "both")


@dataclass
class PerturbationSample:
    mask: np.ndarray
    model_prob: float
    proximity_weight: float


@dataclass
class TokenWeight:
    token: str
    weight: float
    statement: str
    position: int


@dataclass
class Explanation:
    token_weights: List[TokenWeight]
    intercept: float
    local_fidelity_r2: float
    predicted_prob: float
    class_names: Tuple[str, str] = CLASS_NAMES
    tokens: List[TokenWeight] = field(default_factory=list)  # every interpretable token, weight 0 if unselected
    n_samples: int = 0
    target: str = "both"

    def by_statement(self) -> Dict[str, List[TokenWeight]]:
        out: Dict[str, List[TokenWeight]] = {}
        for tw in self.token_weights:
            out.setdefault(tw.statement, []).append(tw)
        return out

    def to_dict(self, doc_id: Optional[str] = None) -> dict:
        def row(tw):
            return {"token": tw.token, "weight": tw.weight, "statement": tw.statement, "position": tw.position}

        payload = {
            "class_names": list(self.class_names),
            "predicted_prob": self.predicted_prob,
            "intercept": self.intercept,
            "local_fidelity_r2": self.local_fidelity_r2,
            "n_samples": self.n_samples,
            "target": self.target,
            "token_weights": [row(tw) for tw in self.token_weights],
            "by_statement": {k: [row(tw) for tw in v] for k, v in self.by_statement().items()},
            "tokens": [row(tw) for tw in self.tokens],
        }
        if doc_id is not None:
            payload["doc_id"] = doc_id
        return payload


# -------------------------------------------------------------- sampling

def perturb(n_tokens: int, n_samples: int, seed=None) -> np.ndarray:
    """Binary keep-masks of shape ``(n_samples, n_tokens)``.

    Row 0 keeps everything. Every other row drops a uniformly drawn number
    of positions (1..n_tokens), chosen uniformly without replacement.
    """
    if n_tokens < 1:
        raise DomainError("nothing to perturb: zero tokens")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    masks = np.ones((n_samples, n_tokens), dtype=np.uint8)
    n_drop = rng.integers(1, n_tokens + 1, size=n_samples - 1)
    for row, k in enumerate(n_drop, start=1):
        masks[row, rng.choice(n_tokens, size=k, replace=False)] = 0
    return masks


def proximity(mask, width: float = KERNEL_WIDTH) -> np.ndarray:
    """``exp(-D^2 / width^2)`` with D the cosine distance to the all-ones mask.

    Works on one mask or a stack of them. An all-zero mask is at distance 1.
    """
    m = np.asarray(mask, dtype=np.float64)
    kept = m.sum(axis=-1)
    n = m.shape[-1]
    # cos(m, 1) = kept / (sqrt(kept) * sqrt(n)) for a 0/1 vector
    cos = np.sqrt(kept / n)
    dist = 1.0 - cos
    return np.exp(-(dist ** 2) / width ** 2)


def apply_mask(tokens: Sequence[str], mask) -> List[str]:
    return [t for t, keep in zip(tokens, mask) if keep]


# ------------------------------------------------------------- surrogate

def _weighted_center(X, y, w):
    sw = w.sum()
    xm = w @ X / sw
    ym = w @ y / sw
    return X - xm, y - ym, xm, ym


def _solve(G, b, idx, ridge):
    if not idx:
        return np.zeros(0)
    sub = G[np.ix_(idx, idx)] + ridge * np.eye(len(idx))
    return np.linalg.solve(sub, b[idx])


def forward_select(X, y, w, max_features: int, ridge: float = RIDGE) -> List[int]:
    """Greedy forward selection maximising the weighted explained sum of squares."""
    Xc, yc, _, _ = _weighted_center(X, y, w)
    G = Xc.T @ (w[:, None] * Xc)
    b = Xc.T @ (w * yc)
    chosen: List[int] = []
    for _ in range(min(max_features, X.shape[1])):
        best, best_gain = None, -np.inf
        for j in range(X.shape[1]):
            if j in chosen:
                continue
            idx = chosen + [j]
            gain = float(b[idx] @ _solve(G, b, idx, ridge))
            if gain > best_gain + 1e-15:
                best, best_gain = j, gain
        chosen.append(best)
    return chosen


def fit_surrogate(masks, probs, weights, max_features: int = MAX_FEATURES, ridge: float = RIDGE):
    """Weighted ridge fit of ``probs`` on mask bits over a forward-selected subset.

    Returns ``(features, coefs, intercept, r2)``; the intercept is not
    penalised. ``features`` are column indices into ``masks``.
    """
    X = np.asarray(masks, dtype=np.float64)
    y = np.asarray(probs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size or y.size != w.size:
        raise ContractError("masks, probs and weights disagree in length")
    if X.shape[0] < max_features + 1:
        raise DomainError(f"need at least {max_features + 1} samples, got {X.shape[0]}")
    if np.all(X == X[0]):
        raise DomainError("degenerate design: every perturbation mask is identical")
    if np.any(w < 0) or w.sum() <= 0:
        raise DomainError("sample weights must be nonnegative with a positive total")

    if max_features >= X.shape[1]:
        features = list(range(X.shape[1]))
    else:
        features = forward_select(X, y, w, max_features, ridge)
    Xc, yc, xm, ym = _weighted_center(X[:, features], y, w)
    G = Xc.T @ (w[:, None] * Xc)
    coefs = np.linalg.solve(G + ridge * np.eye(len(features)), Xc.T @ (w * yc))
    intercept = float(ym - xm @ coefs)

    resid = yc - Xc @ coefs
    sst = float(w @ yc ** 2)
    ssr = float(w @ resid ** 2)
    # a constant target leaves only rounding noise in sst
    r2 = 1.0 - ssr / sst if sst > 1e-24 * max(1.0, float(w @ y ** 2)) else 1.0
    return features, coefs, intercept, r2


# --------------------------------------------------------------- drivers

def explain_tokens(
    classifier: Callable[[List[Dict[str, List[str]]]], np.ndarray],
    statements: Dict[str, List[str]],
    target: Sequence[str],
    n_samples: int = DEFAULT_SAMPLES,
    seed=None,
    max_features: int = MAX_FEATURES,
    width: float = KERNEL_WIDTH,
    ridge: float = RIDGE,
) -> Explanation:
    """Explain ``classifier`` around ``statements`` (name -> tokens).

    Only statements listed in ``target`` are perturbed; the others are
    passed through unchanged. ``classifier`` maps a list of such
    name -> tokens dicts to deceptive-class probabilities.
    """
    space: List[Tuple[str, int]] = [(s, i) for s in target for i in range(len(statements[s]))]
    if not space:
        raise DomainError("nothing to perturb: zero tokens")
    masks = perturb(len(space), n_samples, seed)

    variants = []
    for m in masks:
        keep = {s: np.ones(len(statements[s]), dtype=bool) for s in statements}
        for (s, i), bit in zip(space, m):
            keep[s][i] = bool(bit)
        variants.append({s: apply_mask(statements[s], keep[s]) for s in statements})
    probs = np.asarray(classifier(variants), dtype=np.float64)
    weights = proximity(masks, width)

    all_tokens = [TokenWeight(statements[s][i], 0.0, s, i) for s, i in space]
    k = min(max_features, len(space))
    if n_samples < k + 1 or np.all(masks == masks[0]):
        # too few samples for a surrogate: report the prediction only
        return Explanation([], float(probs[0]), 0.0, float(probs[0]), tokens=all_tokens, n_samples=n_samples, target="+".join(target))
    features, coefs, intercept, r2 = fit_surrogate(masks, probs, weights, k, ridge)
    selected = []
    for j, c in zip(features, coefs):
        all_tokens[j].weight = float(c)
        selected.append(all_tokens[j])
    selected.sort(key=lambda tw: (-abs(tw.weight), tw.statement, tw.position))
    return Explanation(
        selected, intercept, float(r2), float(probs[0]),
        tokens=all_tokens, n_samples=n_samples, target="+".join(target),
    )


def _encode_lists(token_lists, vocab: Vocabulary, max_len: int):
    ids = np.full((len(token_lists), max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(token_lists), max_len), dtype=bool)
    for r, toks in enumerate(token_lists):
        toks = toks[:max_len]
        ids[r, : len(toks)] = [vocab.id(t) for t in toks]
        mask[r, : len(toks)] = True
    # a fully deleted statement is a single padding position (the baseline input)
    mask[~mask.any(axis=1), 0] = True
    return ids, mask


def model_classifier(model, vocab: Vocabulary, lexicon=None, batch_size: int = 256):
    """Wrap a trained token-id model as an explain_tokens classifier."""
    c = model.config

    def classify(variants):
        q1_ids, q1_mask = _encode_lists([v["q1"] for v in variants], vocab, c.max_len_q1)
        arrays = {"q1_ids": q1_ids, "q1_mask": q1_mask}
        if c.paired:
            arrays["q2_ids"], arrays["q2_mask"] = _encode_lists([v.get("q2", []) for v in variants], vocab, c.max_len_q2)
        if c.architecture == "coatt_liwc":
            arrays["lexicon"] = np.repeat(np.asarray(lexicon, dtype=np.float64)[None], len(variants), axis=0)
        return model.predict_proba(batch_size=batch_size, **arrays)

    return classify


def explain_pair(
    model,
    pair: StatementPair,
    vocab: Vocabulary,
    n_samples: int = DEFAULT_SAMPLES,
    seed=None,
    target: str = "both",
    lexicon=None,
    max_features: int = MAX_FEATURES,
) -> Explanation:
    """Explain a trained model's prediction on one statement pair."""
    if target not in TARGETS:
        raise ContractError(f"target must be one of {TARGETS}, got {target!r}")
    if not getattr(model, "trained", False):
        raise ContractError("explanations need a trained model")
    if model.config.external_embeddings or vocab is None:
        raise ContractError("explanations need a token-id model with its vocabulary")
    if target != "q1" and not model.config.paired:
        raise ContractError(f"{model.config.architecture} reads only the first statement; use target 'q1'")
    if model.config.architecture == "coatt_liwc" and lexicon is None:
        raise ContractError("coatt_liwc needs the document's lexicon features")
    statements = {"q1": tokenize(pair.q1)}
    if model.config.paired:
        statements["q2"] = tokenize(pair.q2)
    names = ("q1", "q2") if target == "both" else (target,)
    return explain_tokens(model_classifier(model, vocab, lexicon), statements, names, n_samples, seed, max_features)


# ---------------------------------------------------------------- export

ORANGE = (255, 127, 14)
BLUE = (31, 119, 180)


def explanation_json(expl: Explanation, doc_id: Optional[str] = None) -> str:
    return json.dumps(expl.to_dict(doc_id), indent=2, sort_keys=True) + "\n"


def _span(tw: TokenWeight, scale: float) -> str:
    text = html.escape(tw.token)
    if tw.weight == 0 or scale == 0:
        return f"<span>{text}</span>"
    r, g, b = ORANGE if tw.weight > 0 else BLUE
    alpha = min(1.0, abs(tw.weight) / scale)
    return f'<span style="background: rgba({r}, {g}, {b}, {alpha:.3f})" title="{tw.weight:+.4f}">{text}</span>'


def explanation_html(expl: Explanation, doc_id: Optional[str] = None, statements: Optional[Dict[str, List[str]]] = None) -> str:
    """Standalone page: orange = towards deceptive, blue = towards truthful."""
    scale = max((abs(tw.weight) for tw in expl.tokens), default=0.0)
    weights = {(tw.statement, tw.position): tw for tw in expl.tokens}
    if statements is None:
        statements = {}
        for tw in expl.tokens:
            statements.setdefault(tw.statement, []).append(tw.token)
    title = html.escape(f"Explanation {doc_id}" if doc_id else "Explanation")
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8">',
        f"<title>{title}</title>",
        "<style>body{font-family:sans-serif;max-width:50em;margin:2em auto}"
        "p.stmt{line-height:1.9}span{padding:1px 2px;border-radius:3px}"
        "table{border-collapse:collapse}td,th{padding:2px 8px;border-bottom:1px solid #ddd}</style>",
        "</head><body>",
        f"<h1>{title}</h1>",
        f"<p>P(deceptive) = {expl.predicted_prob:.4f}; surrogate R&sup2; = {expl.local_fidelity_r2:.4f}</p>",
        f'<p><span style="background: rgb{ORANGE}">orange</span> tokens push towards {CLASS_NAMES[1]}, '
        f'<span style="background: rgb{BLUE}">blue</span> tokens towards {CLASS_NAMES[0]}.</p>',
    ]
    for name, toks in statements.items():
        spans = [_span(weights.get((name, i), TokenWeight(t, 0.0, name, i)), scale) for i, t in enumerate(toks)]
        parts.append(f"<h2>{html.escape(name.upper())}</h2>")
        parts.append('<p class="stmt">' + " ".join(spans) + "</p>")
    parts.append("<table><tr><th>token</th><th>statement</th><th>weight</th></tr>")
    for tw in expl.token_weights:
        parts.append(f"<tr><td>{html.escape(tw.token)}</td><td>{tw.statement}</td><td>{tw.weight:+.4f}</td></tr>")
    parts.append("</table></body></html>")
    return "\n".join(parts) + "\n"
