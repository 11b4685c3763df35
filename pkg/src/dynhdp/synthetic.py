"""The "bars" benchmark: 5x5 word grid, ten bar topics, injected abnormal documents.

Normal documents follow the dynamic franchise process with a base measure
uniform over the ten bars, so consecutive documents share most of their
topics.  An
abnormal document keeps the seating drawn for it but each of its topics is
replaced by a distinct bar that the previous document did not use.

Truth file format::

    bars-truth 1
    J=<int> n_train=<int> N=<int>
    alpha=<float> gamma=<float> delta=<float> eta=<float>
    doc <j> <normal|abnormal> tables <t per token> topics <bar per table>
    ...
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as kern
from .anomaly import DocResult
from .corpus import Corpus, Document, HyperParams, Vocabulary
from .crf import GeneratedDoc, SequenceGenerator

GRID = 5
V_BARS = GRID * GRID
N_BARS = 2 * GRID

# generation defaults: few tables per document and slow drift, so a document
# mostly reuses the bars of its predecessor
BARS_HYPER = HyperParams(alpha=0.25, gamma=0.05, delta=0.0001, eta=0.5)


class GenerationError(ValueError):
    pass


def bar_topics() -> np.ndarray:
    """Rows 0-4 are horizontal bars, rows 5-9 vertical; each uniform over 5 cells."""
    phi = np.zeros((N_BARS, V_BARS))
    for r in range(GRID):
        phi[r, r * GRID:(r + 1) * GRID] = 1.0 / GRID
    for c in range(GRID):
        phi[GRID + c, c::GRID] = 1.0 / GRID
    return phi


@dataclass(frozen=True)
class BarsSpec:
    n_train: int = 200
    n_test: int = 200
    doc_length: int = 100
    abnormal_fraction: float = 0.1
    abnormal_positions: Optional[tuple] = None   # absolute document indices

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test < 1:
            raise ValueError("need at least one document")
        if self.doc_length < 1:
            raise ValueError("doc_length must be >= 1")
        if not 0.0 <= self.abnormal_fraction <= 1.0:
            raise ValueError("abnormal_fraction must be in [0, 1]")
        if self.abnormal_positions is not None:
            pos = tuple(sorted(set(int(p) for p in self.abnormal_positions)))
            if any(p < 1 or p >= self.J for p in pos):
                raise ValueError("abnormal positions must lie in 1..J-1")
            object.__setattr__(self, "abnormal_positions", pos)

    @property
    def J(self) -> int:
        return self.n_train + self.n_test

    def positions(self, rng) -> tuple:
        if self.abnormal_positions is not None:
            return self.abnormal_positions
        n = int(round(self.abnormal_fraction * self.n_test))
        test = np.arange(max(self.n_train, 1), self.J)
        n = min(n, len(test))
        return tuple(sorted(int(p) for p in rng.choice(test, n, replace=False)))


@dataclass
class BarsTruth:
    hyper: HyperParams
    n_train: int
    tables: list                 # per document: table index of each token
    topics: list                 # per document: bar id of each table
    labels: list
    phi: np.ndarray = field(default_factory=bar_topics)

    @property
    def J(self) -> int:
        return len(self.tables)

    def mixture(self, j: int) -> np.ndarray:
        """Fraction of document j's tokens served by each bar."""
        k = np.asarray(self.topics[j])[np.asarray(self.tables[j])]
        return np.bincount(k, minlength=N_BARS) / max(len(k), 1)

    def doc_topic_counts(self) -> np.ndarray:
        m = np.zeros((self.J, N_BARS), dtype=np.int64)
        for j, ks in enumerate(self.topics):
            np.add.at(m[j], np.asarray(ks, dtype=np.int64), 1)
        return m


def generate_bars(spec: BarsSpec = BarsSpec(), hyper: HyperParams = BARS_HYPER, rng=None):
    """Draw a bars corpus; returns ``(corpus, truth)``.

    Documents ``0..n_train-1`` are the training prefix and are all normal.
    """
    rng = np.random.default_rng(rng)
    abnormal = set(spec.positions(rng))
    gen = SequenceGenerator(hyper, V_BARS, "dynamic", bar_topics(), rng)
    docs, tables, topics, labels = [], [], [], []
    for j in range(spec.J):
        used_before = gen.used.copy()
        d = gen.seating(spec.doc_length)
        label = "normal"
        if j in abnormal:
            label = "abnormal"
            gen.used = used_before
            d = _relabel(d, gen.m_prev > 0, rng, j)
        d = gen.emit(d)
        docs.append(Document(d.words, j, label))
        tables.append(d.tables)
        topics.append(d.topics)
        labels.append(label)
    corpus = Corpus(Vocabulary(V_BARS), tuple(docs))
    return corpus, BarsTruth(hyper, spec.n_train, tables, topics, labels)


def _relabel(d: GeneratedDoc, prev_used: np.ndarray, rng, j: int) -> GeneratedDoc:
    allowed = np.flatnonzero(~prev_used)
    if len(allowed) == 0:
        raise GenerationError(f"document {j}: the previous document uses every topic")
    distinct = list(dict.fromkeys(d.topics.tolist()))
    replace = len(distinct) > len(allowed)
    new = rng.choice(allowed, len(distinct), replace=replace)
    mapping = dict(zip(distinct, new.tolist()))
    return GeneratedDoc(d.tables, np.array([mapping[k] for k in d.topics], dtype=np.int64), d.words)


def split(corpus: Corpus, n_train: int) -> tuple:
    """Training prefix and test suffix, test documents re-indexed from 0."""
    train = Corpus(corpus.vocabulary, corpus.documents[:n_train])
    test = Corpus(corpus.vocabulary, tuple(
        Document(d.tokens, j, d.label) for j, d in enumerate(corpus.documents[n_train:])))
    return train, test


def true_model_score(truth: BarsTruth, corpus: Corpus, start: int = 0) -> list:
    """Exact scores of documents ``start..`` under the generating process.

    Uses the true bars and the true tables and topics; no sampling.  Each
    document is scored with the generator's own predictive probabilities
    given its predecessors, which were all produced by the normal dynamics
    as far as the model is concerned.
    """
    if len(corpus) != truth.J:
        raise ValueError(f"truth covers {truth.J} documents, corpus has {len(corpus)}")
    h = truth.hyper
    phi = truth.phi
    m = truth.doc_topic_counts()
    results = []
    total = np.zeros(N_BARS)
    # a fresh draw from the base measure lands on each bar with weight gamma / K
    base = h.gamma / N_BARS
    for j, doc in enumerate(corpus.documents):
        if len(doc) != len(truth.tables[j]):
            raise ValueError(f"document {j}: truth has {len(truth.tables[j])} tokens, corpus {len(doc)}")
        prev = m[j - 1] if j > 0 else np.zeros(N_BARS)
        if j >= start:
            if len(doc) == 0:
                results.append(DocResult(doc.index, float("nan"), False))
            else:
                prior = prev + h.delta * total + base
                ll = kern.sequential_loglik(np.asarray(doc.tokens, dtype=np.int64),
                                            np.asarray(truth.tables[j], dtype=np.int64),
                                            np.asarray(truth.topics[j], dtype=np.int64),
                                            len(truth.topics[j]), phi, prior, 1.0 + h.delta,
                                            h.alpha, 0.0, N_BARS, np.zeros(V_BARS))
                results.append(DocResult(doc.index, ll / len(doc), True, np.array([ll]),
                                         m[j].copy()))
        total += m[j]
    return results


# ---------------------------------------------------------------------------
# persistence


def format_truth(truth: BarsTruth) -> str:
    h = truth.hyper
    N = len(truth.tables[0]) if truth.tables else 0
    lines = [
        "bars-truth 1",
        f"J={truth.J} n_train={truth.n_train} N={N}",
        f"alpha={h.alpha!r} gamma={h.gamma!r} delta={h.delta!r} eta={h.eta!r}",
    ]
    for j in range(truth.J):
        t = " ".join(map(str, np.asarray(truth.tables[j]).tolist()))
        k = " ".join(map(str, np.asarray(truth.topics[j]).tolist()))
        lines.append(f"doc {j} {truth.labels[j]} tables {t} topics {k}")
    return "\n".join(lines) + "\n"


def save_truth(truth: BarsTruth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_truth(truth))


def load_truth(path) -> BarsTruth:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().rstrip("\n").split("\n")
    if lines[0] != "bars-truth 1":
        raise ValueError(f"{path}:1: not a bars truth file")
    head = dict(p.split("=") for p in lines[1].split())
    hp = dict(p.split("=") for p in lines[2].split())
    hyper = HyperParams(float(hp["alpha"]), float(hp["gamma"]), float(hp["delta"]), float(hp["eta"]))
    tables, topics, labels = [], [], []
    for n, line in enumerate(lines[3:], start=4):
        parts = line.split()
        try:
            it, ik = parts.index("tables"), parts.index("topics")
        except ValueError:
            raise ValueError(f"{path}:{n}: malformed document line")
        if int(parts[1]) != len(tables):
            raise ValueError(f"{path}:{n}: documents out of order")
        labels.append(parts[2])
        tables.append(np.array([int(x) for x in parts[it + 1:ik]], dtype=np.int64))
        topics.append(np.array([int(x) for x in parts[ik + 1:]], dtype=np.int64))
    if len(tables) != int(head["J"]):
        raise ValueError(f"{path}: expected {head['J']} documents, found {len(tables)}")
    return BarsTruth(hyper, int(head["n_train"]), tables, topics, labels)
