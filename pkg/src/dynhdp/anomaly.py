"""Abnormality scores from predictive likelihoods, and ROC analysis.

A document's score is minus its log predictive likelihood per word.  The
likelihood is a harmonic mean over posterior samples of the document's
sequential predictive probability, so documents the model cannot explain
from the recent past score high.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


@dataclass
class DocResult:
    doc_index: int
    normalized_loglik: float
    defined: bool = True
    sample_logliks: np.ndarray = field(default_factory=lambda: np.empty(0))
    topic_counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def abnormality_score(self) -> float:
        return -self.normalized_loglik if self.defined else float("nan")


def predictive_loglik(samples: Sequence[float], n_words: int) -> float:
    """Harmonic-mean estimate of the log predictive likelihood, divided by ``n_words``.

    ``samples`` are per-sample document log-likelihoods.  Returns NaN for an
    empty document.
    """
    ll = np.asarray(samples, dtype=float)
    if ll.size == 0:
        raise ValueError("the harmonic-mean estimator needs at least one sample")
    if n_words == 0:
        return float("nan")
    neg = -ll
    top = neg.max()
    lse = top + math.log(np.exp(neg - top).sum())
    return float(-(lse - math.log(ll.size)) / n_words)


def score_documents(snapshot, corpus, hyper, cfg, update: bool = True,
                    prev_local=None, rng=None) -> Iterator[tuple]:
    """Yield ``(DocResult, snapshot)`` for each document in order.

    Each document is sampled online against the snapshot left by the
    previous one; its table counts feed the next document's dynamics.  With
    ``update=False`` the snapshot stays frozen and only the local counts are
    carried forward.
    """
    from .inference import online_infer

    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    prev = snapshot.m_last if prev_local is None else prev_local
    for doc in corpus.documents:
        K = snapshot.K
        result, new_snap = online_infer(snapshot, prev, doc, hyper, cfg, rng=rng, update=update)
        prev = result.topic_counts if update else result.topic_counts[:K]
        snapshot = new_snap
        yield result, snapshot


def score_corpus(snapshot, corpus, hyper, cfg, update: bool = True) -> list:
    """Abnormality results for every document of a temporally ordered corpus."""
    return [r for r, _ in score_documents(snapshot, corpus, hyper, cfg, update)]


# ---------------------------------------------------------------------------
# ROC


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray   # thresholds[i] produced point i+1; point 0 is (0, 0)
    auc: float

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.tpr])


def _as_positive(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in ("normal", "abnormal"):
                raise ValueError(f"unknown label {lab!r}")
            out.append(lab == "abnormal")
        else:
            out.append(bool(lab))
    return np.array(out, dtype=bool)


def roc_auc(scores: Iterable[float], labels: Iterable) -> RocCurve:
    """ROC over every distinct score; higher scores flag ``abnormal``.

    Labels are booleans (True = abnormal) or the strings ``normal`` /
    ``abnormal``.  NaN scores are dropped.  Tied scores form a single step,
    which is a diagonal segment when it mixes both classes.
    """
    s = np.asarray(list(scores), dtype=float)
    y = _as_positive(list(labels))
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    keep = ~np.isnan(s)
    s, y = s[keep], y[keep]
    P, Nn = int(y.sum()), int((~y).sum())
    if P == 0 or Nn == 0:
        raise ValueError("ROC needs at least one abnormal and one normal document")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / P]
    fpr = np.r_[0.0, fp / Nn]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, s[last], auc)


# ---------------------------------------------------------------------------
# CSV


def write_scores_csv(fh, results: Sequence[DocResult], labels: Optional[Sequence[str]] = None):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["doc_index", "score", "defined", "label"])
    for n, r in enumerate(results):
        lab = labels[n] if labels is not None else "unlabeled"
        score = repr(r.abnormality_score) if r.defined else "nan"
        w.writerow([r.doc_index, score, int(r.defined), lab])


def read_scores_csv(fh) -> list:
    """Rows of a scores CSV as ``(doc_index, score, defined, label)`` tuples."""
    rows = []
    for rec in csv.DictReader(fh):
        rows.append((int(rec["doc_index"]), float(rec["score"]), rec["defined"] == "1",
                     rec.get("label", "unlabeled")))
    return rows


def write_roc_csv(fh, roc: RocCurve) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    w.writerow(["inf", repr(0.0), repr(0.0)])
    for thr, f, t in zip(roc.thresholds, roc.fpr[1:], roc.tpr[1:]):
        w.writerow([repr(float(thr)), repr(float(f)), repr(float(t))])


def roc_svg(curves: dict, size: int = 320) -> str:
    """Minimal SVG with axes, the chance diagonal and one polyline per curve."""
    pad = 40
    inner = size - 2 * pad
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
              f'viewBox="0 0 {size} {size}">\n')
    out.write(f'<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="none" stroke="black"/>\n')
    out.write(f'<line x1="{pad}" y1="{pad + inner}" x2="{pad + inner}" y2="{pad}" '
              'stroke="#999" stroke-dasharray="4,4"/>\n')
    out.write(f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">'
              'false positive rate</text>\n')
    out.write(f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" '
              f'transform="rotate(-90 12 {size / 2})">true positive rate</text>\n')
    for n, (name, roc) in enumerate(curves.items()):
        pts = " ".join(f"{pad + f * inner:.2f},{pad + (1 - t) * inner:.2f}"
                       for f, t in zip(roc.fpr, roc.tpr))
        color = colors[n % len(colors)]
        out.write(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>\n')
        out.write(f'<text x="{pad + inner - 4}" y="{pad + inner - 8 - 14 * n}" text-anchor="end" '
                  f'font-size="11" fill="{color}">{name} AUC={roc.auc:.3f}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()
