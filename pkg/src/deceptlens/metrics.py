"""Evaluation metrics with deceptive (label 1) as the positive class."""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DomainError

METRIC_NAMES = ("precision", "recall", "f1", "accuracy", "auroc", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    auroc: float
    specificity: float
    stds: Optional[Dict[str, float]] = None
    undefined: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict[str, float]:
        return {m: float(getattr(self, m)) for m in METRIC_NAMES}

    def format_row(self, name: str = "") -> str:
        """Percentages as ``mean ± std`` cells, e.g. ``70.61 ± 2.58``."""
        cells = []
        for m in METRIC_NAMES:
            cell = f"{100 * getattr(self, m):.2f}"
            if self.stds is not None:
                cell += f" ± {100 * self.stds[m]:.2f}"
            cells.append(cell)
        return " | ".join([name] + cells if name else cells)


def _binary_labels(labels):
    y = np.asarray(labels)
    if y.size and not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be 0 (truthful) or 1 (deceptive)")
    return y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ContractError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
    )


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def point_metrics(c: ConfusionCounts):
    """Return ``(values, undefined)``; zero-denominator ratios are 0 and listed in ``undefined``."""
    undefined: List[str] = []
    p = _ratio(c.tp, c.tp + c.fp, "precision", undefined)
    r = _ratio(c.tp, c.tp + c.fn, "recall", undefined)
    f1 = _ratio(2 * p * r, p + r, "f1", undefined)
    acc = _ratio(c.tp + c.tn, c.total, "accuracy", undefined)
    spec = _ratio(c.tn, c.tn + c.fp, "specificity", undefined)
    if undefined:
        warnings.warn(f"undefined metrics reported as 0: {undefined}", RuntimeWarning, stacklevel=2)
    values = {"precision": p, "recall": r, "f1": f1, "accuracy": acc, "specificity": spec}
    return values, undefined


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC from mid-ranks (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUROC needs both classes")
    ranks = kernels.midranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_sweep(scores, labels) -> float:
    """AUROC by trapezoidal integration of the ROC curve over all thresholds."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # one ROC vertex per distinct threshold
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tps = np.r_[0, np.cumsum(y)[last]]
    fps = np.r_[0, (last + 1) - tps[1:]]
    # integrate in integer counts, normalise once
    area2 = np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1]))
    return float(area2 / (2.0 * n_pos * n_neg))


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    values, undefined = point_metrics(confusion(scores, labels, threshold))
    return MetricsReport(auroc=auroc(scores, labels), undefined=undefined, **values)


def aggregate(rows: Sequence[MetricsReport]) -> MetricsReport:
    """Per-metric mean and sample (n-1) standard deviation."""
    if len(rows) < 2:
        raise DomainError("aggregate needs at least 2 rows for a sample standard deviation")
    table = np.array([[getattr(r, m) for m in METRIC_NAMES] for r in rows], dtype=np.float64)
    means = table.mean(axis=0)
    stds = table.std(axis=0, ddof=1)
    undefined = sorted({u for r in rows for u in r.undefined})
    return MetricsReport(
        **{m: float(v) for m, v in zip(METRIC_NAMES, means)},
        stds={m: float(v) for m, v in zip(METRIC_NAMES, stds)},
        undefined=undefined,
    )


def report_json(rows: Sequence[MetricsReport], summary: Optional[MetricsReport] = None) -> str:
    payload = {"runs": [r.as_dict() for r in rows]}
    if summary is not None:
        payload["mean"] = summary.as_dict()
        payload["std"] = dict(summary.stds or {})
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_csv(rows: Sequence[MetricsReport], summary: Optional[MetricsReport] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("row",) + METRIC_NAMES)
    for i, r in enumerate(rows):
        writer.writerow([f"run{i}"] + [repr(getattr(r, m)) for m in METRIC_NAMES])
    if summary is not None:
        writer.writerow(["mean"] + [repr(getattr(summary, m)) for m in METRIC_NAMES])
        if summary.stds is not None:
            writer.writerow(["std"] + [repr(summary.stds[m]) for m in METRIC_NAMES])
    return buf.getvalue()
