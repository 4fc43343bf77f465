"""Command-line front end: ``train``, ``evaluate``, ``explain`` and ``analyze``.

Exit codes: 0 success, 1 internal error, 2 bad input file or configuration,
3 unknown id, 4 parse error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, save_config
from .data import Vocabulary, bundled_synthetic, import_embeddings, load_dataset, resource_path
from .errors import ConfigError, ContractError, DeceptLensError, DomainError, ParseError, UnknownIdError
from .explainer import DEFAULT_SAMPLES, TARGETS, explain_pair, explanation_html, explanation_json
from .linguistics import analysis_report, document_features, load_dictionary, read_feature_csv
from .metrics import evaluate, report_csv, report_json
from .models import ARCHITECTURES, load_model, save_model
from .text import tokenize
from .training import cross_validate, encode_pairs, predict

log = logging.getLogger("deceptlens.cli")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_LOOKUP = 3
EXIT_PARSE = 4


def _write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _dataset(path):
    return load_dataset(path) if path else bundled_synthetic()


def _dictionary(path):
    return load_dictionary(path if path else resource_path("demo_lexicon.dic"))


def _lexicon_matrix(pairs, dict_path, features_path=None):
    imported = read_feature_csv(features_path)[1] if features_path else None
    dictionary = _dictionary(dict_path) if dict_path or not imported else None
    feats = document_features(pairs, dictionary, imported)
    names = list(feats[0].values)
    return np.array([[fv.values[n] for n in names] for fv in feats]), names


def _data_digest(pairs) -> str:
    h = hashlib.sha256()
    for p in pairs:
        h.update(json.dumps([p.id, p.q1, p.q2, p.label], ensure_ascii=False).encode("utf-8"))
    return h.hexdigest()[:16]


def _safe_name(doc_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", doc_id)


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.arch:
        cfg.model.architecture = args.arch
    if args.seed is not None:
        cfg.train.seed = args.seed
    pairs = _dataset(args.data)

    lexicon, lexicon_names = None, None
    if cfg.model.architecture == "coatt_liwc":
        lexicon, lexicon_names = _lexicon_matrix(pairs, args.dict, args.features)
        cfg.model.lexicon_dim = len(lexicon_names)
    embeddings = None
    if args.embeddings:
        embeddings = import_embeddings(args.embeddings, expected_d=cfg.model.d)
        cfg.model.external_embeddings = True

    out = Path(args.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    fingerprint = hashlib.sha256((cfg.fingerprint() + _data_digest(pairs)).encode()).hexdigest()[:16]
    ledger_path = out / "ledger.json"
    ledger = {"fingerprint": fingerprint, "config": cfg.to_dict(), "n_documents": len(pairs), "runs": []}
    completed = {}
    if ledger_path.exists():
        try:
            old = json.loads(ledger_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{ledger_path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
        if old.get("fingerprint") != fingerprint:
            raise ConfigError(f"{ledger_path} belongs to a different config or dataset; choose a fresh --out")
        ledger["runs"] = old.get("runs", [])
        completed = {(e["repetition"], e["fold"]): e for e in ledger["runs"]}
        if completed:
            log.info("resuming: %d run(s) already in the ledger", len(completed))

    def on_run(result):
        ckpt = out / "checkpoints" / f"rep{result.repetition}_fold{result.fold}.ckpt"
        meta = {
            "vocab": result.vocab.to_list() if result.vocab is not None else None,
            "lexicon_names": lexicon_names,
            "lexicon_stats": result.lexicon_stats,
            "repetition": result.repetition,
            "fold": result.fold,
        }
        save_model(result.model, ckpt, meta)
        entry = result.ledger_entry()
        entry["checkpoint"] = str(ckpt.relative_to(out))
        entry["completed_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        ledger["runs"].append(entry)
        _write(ledger_path, _dump(ledger))

    cv = cross_validate(pairs, cfg.model, cfg.train, lexicon, embeddings, completed=completed, on_run=on_run)
    summary = cv.summary()
    _write(out / "metrics.json", report_json(cv.rows, summary))
    _write(out / "metrics.csv", report_csv(cv.rows, summary))
    save_config(cfg, out / "config.json")
    print(f"{len(cv.runs)} runs; mean over runs:")
    print(summary.format_row(cfg.model.architecture))
    return EXIT_OK


# --------------------------------------------------------------- evaluate

def _load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    model, meta = load_model(path)
    vocab = Vocabulary.from_list(meta["vocab"]) if meta.get("vocab") is not None else None
    return model, meta, vocab


def _standardized_lexicon(meta, pairs, args):
    lex, names = _lexicon_matrix(pairs, args.dict, getattr(args, "features", None))
    if names != meta.get("lexicon_names"):
        raise ConfigError("lexicon features differ from the ones the checkpoint was trained with")
    stats = meta["lexicon_stats"]
    return (lex - np.asarray(stats["mean"])) / np.asarray(stats["std"])


def cmd_evaluate(args) -> int:
    model, meta, vocab = _load_checkpoint(args.checkpoint)
    pairs = _dataset(args.data)
    lexicon = _standardized_lexicon(meta, pairs, args) if model.config.architecture == "coatt_liwc" else None
    embeddings = import_embeddings(args.embeddings, expected_d=model.config.d) if args.embeddings else None
    data = encode_pairs(pairs, vocab, model.config, lexicon, embeddings)
    scores = predict(model, data)
    report = evaluate(scores, data.labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "metrics.json", report_json([report]))
    _write(out / "metrics.csv", report_csv([report]))
    rows = ["id,label,prob_deceptive"] + [f"{p.id},{p.label},{float(s)!r}" for p, s in zip(pairs, scores)]
    _write(out / "predictions.csv", "\n".join(rows) + "\n")
    print(report.format_row(model.config.architecture))
    return EXIT_OK


# ---------------------------------------------------------------- explain

def cmd_explain(args) -> int:
    model, meta, vocab = _load_checkpoint(args.checkpoint)
    pairs = _dataset(args.data)
    index = {p.id: i for i, p in enumerate(pairs)}
    missing = [d for d in args.doc_id if d not in index]
    if missing:
        raise UnknownIdError(f"document id(s) not in {args.data or 'the bundled dataset'}: {missing}")
    lexicon = _standardized_lexicon(meta, pairs, args) if model.config.architecture == "coatt_liwc" else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for doc_id in args.doc_id:
        i = index[doc_id]
        pair = pairs[i]
        expl = explain_pair(
            model, pair, vocab, n_samples=args.samples, seed=args.seed, target=args.target,
            lexicon=None if lexicon is None else lexicon[i],
        )
        statements = {"q1": tokenize(pair.q1)}
        if model.config.paired:
            statements["q2"] = tokenize(pair.q2)
        name = _safe_name(doc_id)
        _write(out / f"explanation_{name}.json", explanation_json(expl, doc_id))
        _write(out / f"explanation_{name}.html", explanation_html(expl, doc_id, statements))
        top = ", ".join(f"{tw.token}({tw.statement}) {tw.weight:+.3f}" for tw in expl.token_weights[:5])
        print(f"{doc_id}: P(deceptive)={expl.predicted_prob:.3f}; top: {top}")
    return EXIT_OK


# ---------------------------------------------------------------- analyze

def cmd_analyze(args) -> int:
    pairs = _dataset(args.data)
    imported = read_feature_csv(args.features)[1] if args.features else None
    dictionary = _dictionary(args.dict) if args.dict or imported is None else None
    report = analysis_report(pairs, dictionary, alpha=args.alpha, imported=imported)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "analysis.json", _dump(report))
    c = report["correlations"]
    print(f"{report['n_documents']} documents; significant features: "
          f"{len(c['truthful'])} truthful, {len(c['deceptive'])} deceptive")
    for row in report["jaccard"]:
        print(f"jaccard {row['view']}: {row['jaccard']:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deceptlens", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for per-epoch logs")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_required=False):
        sp.add_argument("--data", required=data_required, help="CSV/JSONL dataset (default: bundled synthetic pairs)")
        sp.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="repeated stratified cross-validation")
    common(t)
    t.add_argument("--config", help="JSON config with 'model' and 'train' sections")
    t.add_argument("--seed", type=int)
    t.add_argument("--arch", choices=ARCHITECTURES)
    t.add_argument("--dict", help="lexicon dictionary for coatt_liwc (default: bundled demo lexicon)")
    t.add_argument("--features", help="feature CSV (doc_id + columns) used instead of / alongside --dict")
    t.add_argument("--embeddings", help="precomputed statement embeddings (VEMB file)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a labelled file")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dict")
    e.add_argument("--features")
    e.add_argument("--embeddings")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("explain", help="local token attributions for documents")
    common(x)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--doc-id", required=True, action="append", help="repeat for several documents")
    x.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--target", choices=TARGETS, default="both")
    x.add_argument("--dict")
    x.add_argument("--features")
    x.set_defaults(func=cmd_explain)

    a = sub.add_parser("analyze", help="text statistics, vocabulary overlap and feature correlations")
    common(a)
    a.add_argument("--dict", help="lexicon dictionary (default: bundled demo lexicon)")
    a.add_argument("--features", help="imported feature CSV; its columns are passed through")
    a.add_argument("--alpha", type=float, default=0.05)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("deceptlens").setLevel(level)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except UnknownIdError as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_LOOKUP
    except FileNotFoundError as exc:
        print(f"input file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DeceptLensError, Exception) as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def run():
    sys.exit(main())
