"""Linguistic analysis: lexicon categories, text statistics, Welch t-tests,
vocabulary overlap and point-biserial correlations with BH correction."""
from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.special import betainc

from .errors import ConfigError, ContractError, DomainError, ParseError
from .text import is_punct, is_word, tokenize

STRUCTURAL = ("word_count", "all_punctuation", "apostrophes", "exclamation_marks")
APOSTROPHES = "'’"
_TERMINAL = re.compile(r"[.!?]+")
_VOWELS = re.compile(r"[aeiouy]+")


# ------------------------------------------------------------- dictionary

@dataclass
class LexiconDictionary:
    categories: Dict[str, List[str]]

    def __post_init__(self):
        self._exact: Dict[str, List[str]] = {}
        self._prefix: Dict[str, List[str]] = {}
        for name, patterns in self.categories.items():
            for pat in patterns:
                if not pat or pat == "*":
                    raise ConfigError(f"category {name!r} has an empty pattern")
                if pat != pat.lower():
                    raise ConfigError(f"pattern {pat!r} is not lowercase")
                if pat.endswith("*"):
                    self._prefix.setdefault(pat[:-1], []).append(name)
                else:
                    self._exact.setdefault(pat, []).append(name)

    @property
    def names(self) -> List[str]:
        return list(self.categories)

    def match(self, token: str) -> List[str]:
        """Categories ``token`` belongs to (a token can match several)."""
        hits = list(self._exact.get(token, ()))
        for i in range(1, len(token) + 1):
            hits.extend(self._prefix.get(token[:i], ()))
        # one count per category even if several patterns hit
        return list(dict.fromkeys(hits))


def parse_dictionary(text: str) -> LexiconDictionary:
    """Parse the ``%``-delimited two-section dictionary format.

    Section one maps integer ids to category names, section two maps
    patterns to one or more ids (tab or space separated).
    """
    lines = text.splitlines()
    marks = [i for i, ln in enumerate(lines) if ln.strip() == "%"]
    if len(marks) < 2:
        raise ParseError("expected two '%' lines delimiting the category section", line=(marks[0] + 1) if marks else 1)
    for i in range(marks[0]):
        if lines[i].strip():
            raise ParseError("content before the first '%' line", line=i + 1)
    ids: Dict[str, str] = {}
    for i in range(marks[0] + 1, marks[1]):
        raw = lines[i].strip()
        if not raw:
            continue
        parts = raw.split()
        if len(parts) != 2 or not parts[0].isdigit():
            raise ParseError(f"expected '<id> <category>', got {raw!r}", line=i + 1)
        cid, name = parts
        if cid in ids:
            raise ParseError(f"duplicate category id {cid}", line=i + 1)
        if name in ids.values():
            raise ParseError(f"duplicate category name {name!r}", line=i + 1)
        ids[cid] = name
    if not ids:
        raise ParseError("no categories declared", line=marks[1] + 1)
    categories: Dict[str, List[str]] = {name: [] for name in ids.values()}
    for i in range(marks[1] + 1, len(lines)):
        raw = lines[i].strip()
        if not raw:
            continue
        if raw == "%":
            raise ParseError("unexpected third '%' line", line=i + 1)
        parts = raw.split()
        pat = parts[0].lower()
        if pat == "*" or len(parts) < 2:
            raise ParseError(f"expected '<pattern> <id> [<id> ...]', got {raw!r}", line=i + 1)
        for cid in parts[1:]:
            if cid not in ids:
                raise ParseError(f"pattern {pat!r} refers to undeclared category id {cid}", line=i + 1)
            if pat not in categories[ids[cid]]:
                categories[ids[cid]].append(pat)
    return LexiconDictionary(categories)


def load_dictionary(path) -> LexiconDictionary:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    try:
        return parse_dictionary(path.read_text(encoding="utf-8"))
    except ParseError as exc:
        err = ParseError(f"{path}: {exc}")
        err.line = exc.line
        raise err from None


# --------------------------------------------------------------- features

@dataclass
class FeatureVector:
    doc_id: str
    values: Dict[str, float]
    token_count: int
    empty: bool = False
    imported: Set[str] = field(default_factory=set)


def category_counts(text: str, dictionary: LexiconDictionary) -> Tuple[Dict[str, int], int]:
    """Raw per-category match counts over word tokens, and the word-token count."""
    counts = {name: 0 for name in dictionary.names}
    n = 0
    for tok in tokenize(text):
        if not is_word(tok):
            continue
        n += 1
        for name in dictionary.match(tok):
            counts[name] += 1
    return counts, n


def to_percent(counts: Dict[str, float], n: int) -> Dict[str, float]:
    if n == 0:
        return {k: 0.0 for k in counts}
    return {k: 100.0 * v / n for k, v in counts.items()}


def structural_features(text: str, n_words: int) -> Dict[str, float]:
    text = text or ""
    punct = sum(1 for ch in text if is_punct(ch))
    apos = sum(text.count(a) for a in APOSTROPHES)
    excl = text.count("!")
    pct = to_percent({"all_punctuation": punct, "apostrophes": apos, "exclamation_marks": excl}, n_words)
    return {"word_count": float(n_words), **pct}


def extract_features(text: str, dictionary: LexiconDictionary, doc_id: str = "") -> FeatureVector:
    """Category percentages of word tokens plus structural counts from the raw text."""
    if not dictionary.categories:
        raise ConfigError("dictionary has no categories")
    counts, n = category_counts(text, dictionary)
    values = to_percent(counts, n)
    for k, v in structural_features(text, n).items():
        values.setdefault(k, v)
    return FeatureVector(doc_id, values, n, empty=n == 0)


def read_feature_csv(path) -> Tuple[List[str], Dict[str, Dict[str, float]]]:
    """Feature table with a ``doc_id`` column; returns ``(columns, doc_id -> values)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "doc_id" not in reader.fieldnames:
            raise ParseError(f"{path}: header must contain a 'doc_id' column", line=1)
        cols = [c for c in reader.fieldnames if c != "doc_id"]
        table = {}
        for i, row in enumerate(reader, start=2):
            try:
                table[row["doc_id"]] = {c: float(row[c]) for c in cols}
            except (TypeError, ValueError):
                raise ParseError(f"{path}: non-numeric feature value", line=i) from None
    return cols, table


def write_feature_csv(path, features: Sequence[FeatureVector]):
    cols = list(features[0].values) if features else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id"] + cols)
        for fv in features:
            w.writerow([fv.doc_id] + [repr(fv.values[c]) for c in cols])


# ------------------------------------------------------------- text stats

@dataclass(frozen=True)
class TextStats:
    syllable_count: int
    lexicon_count: int
    sentence_count: int
    difficult_words: int


def syllables(word: str) -> int:
    """Vowel-group count, minus a silent final ``e`` (kept after ``l``), at least 1."""
    w = "".join(ch for ch in word.lower() if ch.isalpha())
    n = len(_VOWELS.findall(w))
    if w.endswith("e") and not w.endswith("le"):
        n -= 1
    return max(n, 1)


def sentence_count(text: str) -> int:
    segs = [s for s in _TERMINAL.split(text or "") if any(ch.isalnum() for ch in s)]
    return max(len(segs), 1) if any(ch.isalnum() for ch in text or "") else 0


_EASY: Optional[frozenset] = None


def easy_words() -> frozenset:
    global _EASY
    if _EASY is None:
        from .data import resource_path
        lines = resource_path("easy_words.txt").read_text(encoding="utf-8").splitlines()
        _EASY = frozenset(w.lower() for ln in lines if not ln.lstrip().startswith("#") for w in ln.split())
    return _EASY


def text_stats(text: str, easy: Optional[Iterable[str]] = None) -> TextStats:
    easy = easy_words() if easy is None else frozenset(easy)
    toks = [t for t in tokenize(text) if is_word(t)]
    syl = [syllables(t) for t in toks]
    # unique words, as in common readability tools
    difficult = {t for t, s in zip(toks, syl) if s >= 2 and t not in easy}
    return TextStats(int(sum(syl)), len(toks), sentence_count(text), len(difficult))


# ------------------------------------------------------------ statistics

def _t_sf2(t: float, df: float) -> float:
    """Two-sided Student-t tail probability via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def ttest_independent(group_a, group_b) -> Tuple[float, float]:
    """Welch's unequal-variance t-test; returns ``(t, two-sided p)``."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DomainError("each group needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise DomainError("both groups have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(t), _t_sf2(float(t), df)


def jaccard(set_p, set_c) -> float:
    p, c = set(set_p), set(set_c)
    union = p | c
    if not union:
        raise DomainError("Jaccard index of two empty sets is undefined")
    return len(p & c) / len(union)


def vocabulary(texts: Iterable[str]) -> Set[str]:
    """Unique lowercase word tokens (punctuation excluded)."""
    out: Set[str] = set()
    for t in texts:
        out.update(tok for tok in tokenize(t) if is_word(tok))
    return out


def point_biserial(values, labels) -> Tuple[float, float]:
    """Point-biserial r (labels 0/1) and its two-sided p from the t-transform."""
    x = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape != y.shape:
        raise ContractError("values and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be 0/1")
    n = x.size
    n1 = int(y.sum())
    if n1 == 0 or n1 == n:
        raise DomainError("point-biserial needs both classes")
    if n < 3:
        raise DomainError("point-biserial needs at least 3 observations")
    sd = x.std()
    if sd == 0:
        raise DomainError("feature has zero variance")
    p, q = n1 / n, 1 - n1 / n
    r = (x[y == 1].mean() - x[y == 0].mean()) / sd * math.sqrt(p * q)
    r = float(min(1.0, max(-1.0, r)))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, _t_sf2(t, n - 2)


def benjamini_hochberg(p_values, alpha: float = 0.05) -> Tuple[np.ndarray, np.ndarray]:
    """Step-up FDR control; returns ``(rejected flags, adjusted p)`` in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size and (np.isnan(p).any() or p.min() < 0 or p.max() > 1):
        raise ContractError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="mergesort")
    ranked = p[order]
    i = np.arange(1, m + 1)
    below = np.flatnonzero(ranked <= i / m * alpha)
    reject = np.zeros(m, dtype=bool)
    if below.size:
        reject[order[: below[-1] + 1]] = True
    adj_sorted = np.minimum.accumulate((m / i * ranked)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adj_sorted, 1.0)
    return reject, adjusted


# ------------------------------------------------------------ correlations

@dataclass
class CorrelationRow:
    feature: str
    r_pb: float
    p_value: float
    p_adjusted: float
    significant: bool
    associated_class: str
    imported: bool = False

    def as_dict(self):
        return {
            "feature": self.feature,
            "r_pb": self.r_pb,
            "p_value": self.p_value,
            "p_adjusted": self.p_adjusted,
            "significant": self.significant,
            "associated_class": self.associated_class,
            "imported": self.imported,
        }


def correlation_rows(features: Sequence[FeatureVector], labels, alpha: float = 0.05) -> Tuple[List[CorrelationRow], List[str]]:
    """Every non-degenerate feature with r, p and BH-adjusted p; also the skipped names."""
    if not features:
        raise DomainError("no documents")
    names = list(features[0].values)
    for fv in features:
        if list(fv.values) != names:
            raise ContractError(f"document {fv.doc_id!r} has a different feature set")
    y = np.asarray(labels)
    imported = set().union(*(fv.imported for fv in features))
    rows, skipped = [], []
    for name in names:
        x = np.array([fv.values[name] for fv in features])
        try:
            r, p = point_biserial(x, y)
        except DomainError as exc:
            warnings.warn(f"skipping feature {name!r}: {exc}", RuntimeWarning, stacklevel=2)
            skipped.append(name)
            continue
        rows.append(CorrelationRow(name, r, p, p, False, "deceptive" if r > 0 else "truthful", name in imported))
    if rows:
        flags, adj = benjamini_hochberg([r.p_value for r in rows], alpha)
        for row, f, a in zip(rows, flags, adj):
            row.p_adjusted = float(a)
            row.significant = bool(a < alpha)
    return rows, skipped


def correlation_report(features: Sequence[FeatureVector], labels, alpha: float = 0.05) -> Dict[str, list]:
    """Significant features split by associated class, each sorted by |r| descending."""
    rows, skipped = correlation_rows(features, labels, alpha)
    sig = [r for r in rows if r.significant]
    key = lambda r: (-abs(r.r_pb), r.feature)  # noqa: E731
    return {
        "truthful": sorted((r for r in sig if r.r_pb < 0), key=key),
        "deceptive": sorted((r for r in sig if r.r_pb > 0), key=key),
        "skipped": skipped,
    }


# ---------------------------------------------------------------- report

TEXTSTAT_FIELDS = ("syllable_count", "lexicon_count", "sentence_count", "difficult_words")
VIEWS = ("q1", "q2", "q1_q2")


def _view_text(pair, view):
    if view == "q1":
        return pair.q1
    if view == "q2":
        return pair.q2
    return f"{pair.q1}\n{pair.q2}"


def _describe(x):
    return {"mean": float(np.mean(x)), "std": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0}


def textstats_table(pairs, alpha: float = 0.05, easy=None) -> List[dict]:
    labels = np.array([p.label for p in pairs])
    rows = []
    for view in VIEWS:
        stats = [text_stats(_view_text(p, view), easy) for p in pairs]
        for f in TEXTSTAT_FIELDS:
            x = np.array([getattr(s, f) for s in stats], dtype=np.float64)
            row = {"view": view, "metric": f, "truthful": _describe(x[labels == 0]), "deceptive": _describe(x[labels == 1])}
            try:
                row["t"], row["p"] = ttest_independent(x[labels == 0], x[labels == 1])
            except DomainError:
                row["t"], row["p"] = None, None
            rows.append(row)
    tested = [r for r in rows if r["p"] is not None]
    if tested:
        flags, adj = benjamini_hochberg([r["p"] for r in tested], alpha)
        for r, a in zip(tested, adj):
            r["p_adjusted"] = float(a)
            r["significant"] = bool(a < alpha)
    for r in rows:
        r.setdefault("p_adjusted", None)
        r.setdefault("significant", False)
    return rows


def jaccard_table(pairs) -> List[dict]:
    rows = []
    for view in ("q1_q2", "q1", "q2"):
        if view == "q1_q2":
            t = vocabulary(p.q1 for p in pairs if p.label == 0) | vocabulary(p.q2 for p in pairs if p.label == 0)
            d = vocabulary(p.q1 for p in pairs if p.label == 1) | vocabulary(p.q2 for p in pairs if p.label == 1)
        else:
            t = vocabulary(_view_text(p, view) for p in pairs if p.label == 0)
            d = vocabulary(_view_text(p, view) for p in pairs if p.label == 1)
        rows.append({"view": view, "truthful_vocabulary": len(t), "deceptive_vocabulary": len(d), "jaccard": jaccard(t, d)})
    return rows


def document_features(pairs, dictionary: Optional[LexiconDictionary], imported: Optional[Dict[str, Dict[str, float]]] = None) -> List[FeatureVector]:
    """Per-document features over Q1 and Q2 together; imported columns win on name clashes."""
    out = []
    for p in pairs:
        text = f"{p.q1}\n{p.q2}"
        if dictionary is not None:
            fv = extract_features(text, dictionary, p.id)
        else:
            n = sum(1 for t in tokenize(text) if is_word(t))
            fv = FeatureVector(p.id, structural_features(text, n), n, empty=n == 0)
        if imported is not None:
            if p.id not in imported:
                raise ContractError(f"imported features have no row for document {p.id!r}")
            fv.values.update(imported[p.id])
            fv.imported = set(imported[p.id])
        out.append(fv)
    return out


def analysis_report(pairs, dictionary: Optional[LexiconDictionary], alpha: float = 0.05, imported=None, easy=None) -> dict:
    if not pairs:
        raise DomainError("no documents to analyse")
    labels = [p.label for p in pairs]
    feats = document_features(pairs, dictionary, imported)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        corr = correlation_report(feats, labels, alpha)
    return {
        "alpha": alpha,
        "n_documents": len(pairs),
        "n_truthful": int(sum(1 for y in labels if y == 0)),
        "n_deceptive": int(sum(1 for y in labels if y == 1)),
        "textstats": textstats_table(pairs, alpha, easy),
        "jaccard": jaccard_table(pairs),
        "correlations": {
            "truthful": [r.as_dict() for r in corr["truthful"]],
            "deceptive": [r.as_dict() for r in corr["deceptive"]],
            "skipped": corr["skipped"],
        },
    }
