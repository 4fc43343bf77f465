"""Dataset loading, vocabularies and the external-embedding file format."""
from __future__ import annotations

import csv
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ParseError
from .text import tokenize

PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_LEN = 64

LABELS = {"0": 0, "1": 1, "truthful": 0, "deceptive": 1, "truth": 0, "lie": 1}


@dataclass(frozen=True)
class StatementPair:
    id: str
    q1: str
    q2: str
    label: int
    source: str = "paired"

    def __post_init__(self):
        if not self.q1 or not self.q1.strip():
            raise ValueError("q1 must be non-empty")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def parse_label(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"unrecognised label {value!r}")
    if isinstance(value, (int, float)) and value in (0, 1):
        return int(value)
    key = str(value).strip().lower()
    if key in LABELS:
        return LABELS[key]
    raise ValueError(f"unrecognised label {value!r}")


def _read_rows(path) -> List[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        rows = []
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=i) from None
                if not isinstance(obj, dict):
                    raise ParseError(f"{path}: expected an object per line", line=i)
                rows.append(obj)
        return rows
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: missing header row", line=1)
        return [dict(r) for r in reader]


def _validate(path, rows, required, make):
    records, errors = [], []
    for i, row in enumerate(rows, start=1):
        missing = [k for k in required if k not in row or row[k] is None]
        if missing:
            errors.append(f"row {i}: missing field(s) {missing}")
            continue
        try:
            label = parse_label(row["label"])
        except ValueError as exc:
            errors.append(f"row {i}: field 'label': {exc}")
            continue
        try:
            records.append(make(i, row, label))
        except ValueError as exc:
            errors.append(f"row {i}: {exc}")
    if errors:
        shown = "; ".join(errors[:20])
        more = f" (+{len(errors) - 20} more)" if len(errors) > 20 else ""
        raise ParseError(f"{path}: {len(errors)} invalid row(s): {shown}{more}")
    return records


def load_paired(path) -> List[StatementPair]:
    """Read a CSV (with header) or JSONL file with ``id, q1, q2, label``."""
    def make(i, row, label):
        q1 = str(row["q1"])
        if not q1.strip():
            raise ValueError("field 'q1' is empty")
        return StatementPair(str(row["id"]), q1, str(row["q2"] or ""), label, "paired")

    return _validate(path, _read_rows(path), ("id", "q1", "q2", "label"), make)


def split_statement(text: str) -> Tuple[str, str]:
    """Split at the whitespace-token midpoint; the first half takes the odd token."""
    toks = text.split()
    cut = (len(toks) + 1) // 2
    return " ".join(toks[:cut]), " ".join(toks[cut:])


def load_open_domain(path) -> List[StatementPair]:
    """Read merged single statements (``id, text, label``) and split each in two."""
    def make(i, row, label):
        text = str(row["text"])
        if not text.strip():
            raise ValueError("field 'text' is empty")
        q1, q2 = split_statement(text)
        return StatementPair(str(row["id"]), q1, q2, label, "open_domain")

    return _validate(path, _read_rows(path), ("id", "text", "label"), make)


def load_dataset(path) -> List[StatementPair]:
    """Paired file (``q1``/``q2`` columns) or merged open-domain file (``text`` column)."""
    rows = _read_rows(path)
    if rows and "text" in rows[0] and "q1" not in rows[0]:
        return load_open_domain(path)
    return load_paired(path)


# ----------------------------------------------------------------- vocab

@dataclass
class Vocabulary:
    token_to_id: Dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.token_to_id) + 2

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_list(self) -> List[str]:
        return sorted(self.token_to_id, key=self.token_to_id.get)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        return cls({t: i + 2 for i, t in enumerate(tokens)})


def build_vocab(train_texts: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Vocabulary over training texts only; ids 0 and 1 are pad and unknown."""
    counts = Counter()
    n_docs = 0
    for text in train_texts:
        n_docs += 1
        counts.update(tokenize(text))
    if n_docs == 0:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    kept = sorted(t for t, c in counts.items() if c >= min_count)
    return Vocabulary.from_list(kept)


def encode_tokens(tokens: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN):
    ids = np.zeros(max_len, dtype=np.int64)
    toks = list(tokens)[:max_len]
    ids[: len(toks)] = [vocab.id(t) for t in toks]
    mask = np.zeros(max_len, dtype=bool)
    mask[: len(toks)] = True
    return ids, mask


def encode(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN):
    """Token ids padded with 0 to ``max_len`` and the matching real-token mask."""
    return encode_tokens(tokenize(text), vocab, max_len)


def encode_batch(texts: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN):
    ids = np.zeros((len(texts), max_len), dtype=np.int64)
    mask = np.zeros((len(texts), max_len), dtype=bool)
    for i, t in enumerate(texts):
        ids[i], mask[i] = encode(t, vocab, max_len)
    return ids, mask


# ------------------------------------------------------------ embeddings

EMB_MAGIC = b"VEMB"
EMB_VERSION = 1


def export_embeddings(path, mapping: Dict[str, Tuple[np.ndarray, np.ndarray]], d: int):
    """Write ``doc_id -> (C (d x N), S (d x T))`` as float32, little-endian."""
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", EMB_VERSION, d))
        for doc_id, mats in mapping.items():
            key = str(doc_id).encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            for m in mats:
                m = np.asarray(m)
                if m.ndim != 2 or m.shape[0] != d:
                    raise ConfigError(f"{doc_id}: matrix shape {m.shape} does not have {d} rows")
                fh.write(struct.pack("<I", m.shape[1]))
                fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def import_embeddings(path, expected_d: Optional[int] = None) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise ParseError(f"{path}: not an embedding file (bad magic)")
    version, d = struct.unpack_from("<II", raw, 4)
    if version != EMB_VERSION:
        raise ParseError(f"{path}: unsupported embedding file version {version}")
    if expected_d is not None and d != expected_d:
        raise ConfigError(f"{path}: embeddings have d={d} but the model expects d={expected_d}")
    pos = 12
    out = {}
    try:
        while pos < len(raw):
            (klen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            doc_id = raw[pos:pos + klen].decode("utf-8")
            pos += klen
            mats = []
            for _ in range(2):
                (n,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                nbytes = 4 * d * n
                if pos + nbytes > len(raw):
                    raise ParseError(f"{path}: truncated record for {doc_id!r}")
                mats.append(np.frombuffer(raw[pos:pos + nbytes], dtype="<f4").astype(np.float64).reshape(d, n))
                pos += nbytes
            out[doc_id] = (mats[0], mats[1])
    except struct.error:
        raise ParseError(f"{path}: truncated embedding file") from None
    return out


def embeddings_for(pairs: Sequence[StatementPair], mapping, max_len: Optional[int] = None):
    """Stack per-document matrices into padded ``(B, d, L)`` arrays with masks."""
    missing = [p.id for p in pairs if p.id not in mapping]
    if missing:
        raise ConfigError(f"no embeddings for document id(s): {missing}")
    arrays = []
    for which in (0, 1):
        mats = [mapping[p.id][which] for p in pairs]
        d = mats[0].shape[0]
        length = max(max(m.shape[1] for m in mats), 1)
        if max_len is not None:
            length = min(length, max_len)
        x = np.zeros((len(mats), d, length))
        mask = np.zeros((len(mats), length), dtype=bool)
        for i, m in enumerate(mats):
            n = min(m.shape[1], length)
            x[i, :, :n] = m[:, :n]
            mask[i, :n] = True
        arrays.append((x, mask))
    return arrays[0], arrays[1]


# -------------------------------------------------------------- synthetic

_FILLER = (
    "we went to the park and then walked home before dinner with some friends from work "
    "it was a quiet day so i read a book made coffee and watched the rain outside the window "
    "there is a small market near the station where people buy bread fruit and fresh flowers"
).split()
_TRUTH_CUES = "will soon plan tomorrow next weekend food pizza".split()
_LIE_CUES = "i'm honestly really promised can't did was".split()
_KEYS_Q1 = ("anchor", "beacon", "cobalt")
_KEYS_Q2 = ("xylem", "yonder", "zephyr")


def make_synthetic_pairs(n: int = 2000, seed: int = 0, cue_rate: float = 0.04, length=(6, 12)) -> List[StatementPair]:
    """Paired statements whose label is fixed by a planted cross-statement token match.

    Q1 carries one key from ``_KEYS_Q1`` and Q2 one from ``_KEYS_Q2``; the
    pair is deceptive exactly when the two keys share an index. The Q1 key
    alone is independent of the label. Filler words are shared across
    classes except that each filler slot is replaced by a class-typical
    cue word with probability ``cue_rate`` (weak, Q1-visible signal).
    """
    rng = np.random.default_rng(seed)
    out = []
    n_keys = len(_KEYS_Q1)
    for i in range(n):
        label = int(rng.random() < 857 / 1640)
        a = int(rng.integers(n_keys))
        b = a if label else int((a + rng.integers(1, n_keys)) % n_keys)
        cues = _LIE_CUES if label else _TRUTH_CUES
        texts = []
        for key in (_KEYS_Q1[a], _KEYS_Q2[b]):
            m = int(rng.integers(length[0], length[1] + 1))
            toks = [cues[rng.integers(len(cues))] if rng.random() < cue_rate else _FILLER[rng.integers(len(_FILLER))] for _ in range(m)]
            toks.insert(int(rng.integers(m + 1)), key)
            texts.append(" ".join(toks))
        out.append(StatementPair(f"syn{i:05d}", texts[0], texts[1], label, "paired"))
    return out


def write_jsonl(pairs: Sequence[StatementPair], path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"id": p.id, "q1": p.q1, "q2": p.q2, "label": p.label}) + "\n")


def resource_path(name: str) -> Path:
    return Path(str(resources.files("deceptlens") / "resources" / name))


def bundled_synthetic() -> List[StatementPair]:
    """The shipped 2000-pair synthetic corpus (``make_synthetic_pairs(2000, seed=0)``)."""
    return load_paired(resource_path("synthetic_pairs.jsonl"))
