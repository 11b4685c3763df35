"""Chinese-restaurant-franchise state, seating probabilities and a forward sampler.

Tokens are customers, documents are restaurants, topics are dishes.  The
state is stored as flat numpy arrays so the numba kernels in
``dynhdp._kernels`` can mutate it in place:

* ``doc_off[j]:doc_off[j+1]`` indexes the tokens of document ``j`` and also
  the table slots of that document (a document never has more tables than
  tokens).
* ``t_assign[i]`` is the local table index of flat token ``i`` (``-1`` when
  unseated).
* ``n_tab[doc_off[j] + t]`` / ``k_tab[doc_off[j] + t]`` are the customer count
  and topic of table ``t`` in document ``j``; free slots hold ``0`` / ``-1``.
* ``m[j, k]`` counts tables of document ``j`` serving topic ``k``; ``m_dot``,
  ``nkw`` and ``nk`` are the corpus-wide table and word counts per topic.

Topic and table indices stay dense: a removed table or topic is replaced by
the last one.  ``seat`` accepts an insertion position so it can undo an
``unseat`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .corpus import Corpus, Document, HyperParams, InvalidHyperparameterError, Vocabulary


class ConsistencyError(AssertionError):
    """CrfState counts disagree with its assignments."""


# ---------------------------------------------------------------------------
# in-place kernels shared by the Python API and the Gibbs sweeps


@njit(cache=True)
def _move_table(doc_off, t_assign, n_tab, k_tab, j, src, dst):
    base = doc_off[j]
    n_tab[base + dst] = n_tab[base + src]
    k_tab[base + dst] = k_tab[base + src]
    n_tab[base + src] = 0
    k_tab[base + src] = -1
    for i in range(doc_off[j], doc_off[j + 1]):
        if t_assign[i] == src:
            t_assign[i] = dst


@njit(cache=True)
def _move_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, src, dst):
    J = ntab.shape[0]
    for j in range(J):
        base = doc_off[j]
        for t in range(ntab[j]):
            if k_tab[base + t] == src:
                k_tab[base + t] = dst
    for j in range(J):
        m[j, dst] = m[j, src]
        m[j, src] = 0
    m_dot[dst] = m_dot[src]
    m_dot[src] = 0
    for w in range(nkw.shape[1]):
        nkw[dst, w] = nkw[src, w]
        nkw[src, w] = 0
    nk[dst] = nk[src]
    nk[src] = 0


@njit(cache=True)
def _drop_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, Kbox, k):
    if m_dot[k] != 0 or nk[k] != 0:
        raise AssertionError("dropping a topic that still has tables or words")
    last = Kbox[0] - 1
    if k != last:
        _move_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, last, k)
    Kbox[0] = last


@njit(cache=True)
def _insert_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, Kbox, h):
    K = Kbox[0]
    if h > K or K >= m_dot.shape[0]:
        raise AssertionError("topic insertion out of range")
    if h < K:
        _move_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, h, K)
    Kbox[0] = K + 1


@njit(cache=True)
def unseat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox, j, i):
    """Remove flat token ``i`` of document ``j``.

    Returns ``(table, topic, table_removed, topic_removed)``; feeding the
    tuple back to ``seat_kernel`` restores the state bit for bit.
    """
    t = t_assign[i]
    if t < 0:
        raise AssertionError("token is not seated")
    base = doc_off[j]
    s = base + t
    k = k_tab[s]
    w = words[i]
    t_assign[i] = -1
    n_tab[s] -= 1
    nkw[k, w] -= 1
    nk[k] -= 1
    table_removed = False
    topic_removed = False
    if n_tab[s] == 0:
        table_removed = True
        m[j, k] -= 1
        m_dot[k] -= 1
        last = ntab[j] - 1
        k_tab[s] = -1
        if t != last:
            _move_table(doc_off, t_assign, n_tab, k_tab, j, last, t)
        ntab[j] = last
        if m_dot[k] == 0:
            topic_removed = True
            _drop_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, Kbox, k)
    return t, k, table_removed, topic_removed


@njit(cache=True)
def seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
                j, i, t, k, new_table, new_topic):
    """Seat flat token ``i`` at table ``t``; open the table (and topic) when asked.

    A new table is inserted at position ``t`` (the occupant, if any, moves to
    the end) and a new topic at index ``k`` likewise.
    """
    if t_assign[i] >= 0:
        raise AssertionError("token is already seated")
    base = doc_off[j]
    if new_table:
        if t > ntab[j]:
            raise AssertionError("table insertion out of range")
        if new_topic:
            _insert_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, Kbox, k)
        elif k < 0 or k >= Kbox[0]:
            raise AssertionError("unknown topic")
        if t < ntab[j]:
            _move_table(doc_off, t_assign, n_tab, k_tab, j, t, ntab[j])
        ntab[j] += 1
        k_tab[base + t] = k
        m[j, k] += 1
        m_dot[k] += 1
    elif t < 0 or t >= ntab[j]:
        raise AssertionError("unknown table")
    kt = k_tab[base + t]
    w = words[i]
    t_assign[i] = t
    n_tab[base + t] += 1
    nkw[kt, w] += 1
    nk[kt] += 1


# ---------------------------------------------------------------------------


class CrfState:
    """Seating arrangement of a corpus in the Chinese restaurant franchise."""

    def __init__(self, corpus: Corpus, capacity: int = 16):
        self.V = corpus.V
        self.J = len(corpus)
        lengths = corpus.lengths()
        self.doc_off = np.zeros(self.J + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.doc_off[1:])
        total = int(self.doc_off[-1])
        self.words = np.zeros(total, dtype=np.int64)
        for d, lo in zip(corpus.documents, self.doc_off[:-1]):
            self.words[lo:lo + len(d)] = d.tokens
        self.t_assign = np.full(total, -1, dtype=np.int64)
        self.ntab = np.zeros(self.J, dtype=np.int64)
        self.n_tab = np.zeros(total, dtype=np.int64)
        self.k_tab = np.full(total, -1, dtype=np.int64)
        cap = max(int(capacity), 1)
        self.m = np.zeros((self.J, cap), dtype=np.int64)
        self.m_dot = np.zeros(cap, dtype=np.int64)
        self.nkw = np.zeros((cap, self.V), dtype=np.int64)
        self.nk = np.zeros(cap, dtype=np.int64)
        self.Kbox = np.zeros(1, dtype=np.int64)
        self.phi: Optional[np.ndarray] = None

    # -- shape ---------------------------------------------------------------
    @property
    def K(self) -> int:
        return int(self.Kbox[0])

    @property
    def capacity(self) -> int:
        return self.m_dot.shape[0]

    def doc_length(self, j: int) -> int:
        return int(self.doc_off[j + 1] - self.doc_off[j])

    def ensure_capacity(self, n_topics: int) -> None:
        cap = self.capacity
        if n_topics <= cap:
            return
        new = max(n_topics, 2 * cap)
        m = np.zeros((self.J, new), dtype=np.int64)
        m[:, :cap] = self.m
        nkw = np.zeros((new, self.V), dtype=np.int64)
        nkw[:cap] = self.nkw
        self.m, self.nkw = m, nkw
        self.m_dot = np.concatenate([self.m_dot, np.zeros(new - cap, dtype=np.int64)])
        self.nk = np.concatenate([self.nk, np.zeros(new - cap, dtype=np.int64)])

    def arrays(self) -> tuple:
        return (self.doc_off, self.words, self.t_assign, self.ntab, self.n_tab, self.k_tab,
                self.m, self.m_dot, self.nkw, self.nk, self.Kbox)

    # -- views -------------------------------------------------------------------
    def table_counts(self, j: int) -> np.ndarray:
        base = self.doc_off[j]
        return self.n_tab[base:base + self.ntab[j]].copy()

    def table_topics(self, j: int) -> np.ndarray:
        base = self.doc_off[j]
        return self.k_tab[base:base + self.ntab[j]].copy()

    def tables_of(self, j: int) -> np.ndarray:
        return self.t_assign[self.doc_off[j]:self.doc_off[j + 1]].copy()

    def topic_of_tokens(self, j: int) -> np.ndarray:
        base = self.doc_off[j]
        t = self.tables_of(j)
        return np.where(t >= 0, self.k_tab[base + np.maximum(t, 0)], -1)

    def doc_topic_counts(self, j: int) -> np.ndarray:
        return self.m[j, :self.K].copy()

    def copy(self) -> "CrfState":
        new = object.__new__(CrfState)
        for name, value in self.__dict__.items():
            setattr(new, name, value.copy() if isinstance(value, np.ndarray) else value)
        return new

    def fingerprint(self) -> tuple:
        """Every array of the state, for bit-exact comparisons."""
        return tuple(a.tobytes() for a in self.arrays())

    # -- mutation --------------------------------------------------------------
    def _flat(self, j: int, i: int) -> int:
        if not 0 <= i < self.doc_length(j):
            raise IndexError(f"token {i} outside document {j}")
        return int(self.doc_off[j] + i)

    def unseat(self, j: int, i: int) -> tuple:
        """Unseat token ``i`` of document ``j``; returns the undo record."""
        flat = self._flat(j, i)
        if self.t_assign[flat] < 0:
            raise ConsistencyError(f"token ({j}, {i}) is not seated")
        t, k, tr, kr = unseat_kernel(*self.arrays(), j, flat)
        return int(t), int(k), bool(tr), bool(kr)

    def seat(self, j: int, i: int, table: int, topic: int = -1,
             new_table: bool = False, new_topic: bool = False) -> None:
        flat = self._flat(j, i)
        if self.t_assign[flat] >= 0:
            raise ConsistencyError(f"token ({j}, {i}) is already seated")
        if new_table and not 0 <= table <= self.ntab[j]:
            raise ConsistencyError(f"cannot open table {table} in document {j}")
        if not new_table and not 0 <= table < self.ntab[j]:
            raise ConsistencyError(f"document {j} has no table {table}")
        if new_topic:
            if not 0 <= topic <= self.K:
                raise ConsistencyError(f"cannot create topic {topic}")
            self.ensure_capacity(self.K + 1)
        elif new_table and not 0 <= topic < self.K:
            raise ConsistencyError(f"unknown topic {topic}")
        seat_kernel(*self.arrays(), j, flat, table, topic, new_table, new_topic)

    @classmethod
    def from_assignments(cls, corpus: Corpus, tables: Sequence, topics: Sequence) -> "CrfState":
        """Build a state from per-document token tables and per-table topic labels.

        Topic labels may be arbitrary non-negative integers; they are renumbered
        densely by first appearance.  ``state.topic_labels`` keeps the mapping.
        """
        state = cls(corpus)
        relabel: dict = {}
        for j, doc in enumerate(corpus.documents):
            t_of = np.asarray(tables[j], dtype=np.int64)
            k_of = list(topics[j])
            if len(t_of) != len(doc):
                raise ConsistencyError(f"document {j}: table list length mismatch")
            local: dict = {}
            for i, t in enumerate(t_of.tolist()):
                if t in local:
                    state.seat(j, i, local[t])
                    continue
                label = k_of[t]
                new_topic = label not in relabel
                if new_topic:
                    relabel[label] = state.K
                local[t] = int(state.ntab[j])
                state.seat(j, i, local[t], relabel[label], new_table=True, new_topic=new_topic)
        state.topic_labels = np.array(sorted(relabel, key=relabel.get), dtype=np.int64)
        return state

    # -- checks ----------------------------------------------------------------
    def validate(self) -> None:
        """Recount everything from the assignments and compare."""
        K, cap = self.K, self.capacity

        def check(cond, msg):
            if not cond:
                raise ConsistencyError(msg)

        m = np.zeros_like(self.m)
        nkw = np.zeros_like(self.nkw)
        for j in range(self.J):
            base, N = int(self.doc_off[j]), self.doc_length(j)
            T = int(self.ntab[j])
            t = self.t_assign[base:base + N]
            check(np.all((t >= 0) & (t < T)) or N == 0, f"doc {j}: table index out of range")
            counts = np.bincount(t, minlength=T) if N else np.zeros(T, dtype=np.int64)
            check(np.array_equal(counts, self.n_tab[base:base + T]), f"doc {j}: n_jt mismatch")
            check(np.all(self.n_tab[base:base + T] >= 1), f"doc {j}: empty occupied table")
            check(np.all(self.n_tab[base + T:base + N] == 0), f"doc {j}: dirty free table slot")
            check(np.all(self.k_tab[base + T:base + N] == -1), f"doc {j}: dirty free table slot")
            ks = self.k_tab[base:base + T]
            check(np.all((ks >= 0) & (ks < K)), f"doc {j}: table topic out of range")
            np.add.at(m[j], ks, 1)
            if N:
                np.add.at(nkw, (ks[t], self.words[base:base + N]), 1)
            check(int(self.n_tab[base:base + T].sum()) == N, f"doc {j}: sum n_jt != N_j")
        check(np.array_equal(m, self.m), "m_jk mismatch")
        check(np.array_equal(m.sum(axis=0), self.m_dot), "m_dot mismatch")
        check(np.array_equal(nkw, self.nkw), "topic-word counts mismatch")
        check(np.array_equal(nkw.sum(axis=1), self.nk), "topic totals mismatch")
        check(np.all(self.m_dot[:K] >= 1), "instantiated topic without tables")
        check(np.all(self.m_dot[K:cap] == 0) and np.all(self.nk[K:cap] == 0), "dirty free topic slot")
        check(np.array_equal(self.m.sum(axis=1), self.ntab), "m_j. != occupied tables")


# ---------------------------------------------------------------------------
# seating and topic probabilities


def _normalize(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    if not total > 0:
        raise ConsistencyError("probability normalizer is zero")
    return weights / total


def table_probs(state: CrfState, j: int, alpha: float) -> np.ndarray:
    """Seating probabilities of a token: occupied tables of ``j`` then a new table.

    The token being resampled must already be unseated.
    """
    if not alpha > 0:
        raise InvalidHyperparameterError(f"alpha must be > 0, got {alpha}")
    n = state.table_counts(j).astype(float)
    return _normalize(np.append(n, alpha))


def topic_probs_hdp(state: CrfState, gamma: float) -> np.ndarray:
    """Topic of a new table: existing topics by corpus-wide table count, then new."""
    if not gamma > 0:
        raise InvalidHyperparameterError(f"gamma must be > 0, got {gamma}")
    return _normalize(np.append(state.m_dot[:state.K].astype(float), gamma))


def topic_probs_dynamic(state: CrfState, j: int, gamma: float, delta: float) -> np.ndarray:
    """Topic of a new table in document ``j`` favouring topics of ``j`` and ``j-1``.

    Weight of topic k is ``m[j,k] + m[j-1,k] + delta * m_dot[k]``; the first
    document has no predecessor and its previous counts are zero.
    """
    if not gamma > 0:
        raise InvalidHyperparameterError(f"gamma must be > 0, got {gamma}")
    if not delta >= 0:
        raise InvalidHyperparameterError(f"delta must be >= 0, got {delta}")
    K = state.K
    w = state.m[j, :K].astype(float)
    if j > 0:
        w = w + state.m[j - 1, :K]
    w = w + delta * state.m_dot[:K]
    return _normalize(np.append(w, gamma))


def word_loglik(state: CrfState, k, w: int, eta: float) -> float:
    """Collapsed predictive log-probability of word ``w`` under topic ``k``.

    ``k="new"`` gives the prior predictive ``log(1/V)``.
    """
    if not eta > 0:
        raise InvalidHyperparameterError(f"eta must be > 0, got {eta}")
    V = state.V
    if isinstance(k, str):
        if k != "new":
            raise ValueError(f"unknown topic {k!r}")
        return -math.log(V)
    return math.log((state.nkw[k, w] + eta) / (state.nk[k] + V * eta))


# ---------------------------------------------------------------------------
# forward sampling


@dataclass
class GeneratedDoc:
    tables: np.ndarray      # table index per token
    topics: np.ndarray      # topic label per table
    words: np.ndarray


class SequenceGenerator:
    """Draws documents one at a time from the franchise process.

    ``topics`` fixes the topic-word distributions and makes the base measure
    uniform over its rows: a draw from it picks any row, so a row that is
    already in use can be drawn again.  Without ``topics`` every new topic
    draws its distribution from a symmetric Dirichlet(eta).
    """

    def __init__(self, hyper: HyperParams, V: int, mode: str = "dynamic",
                 topics: Optional[np.ndarray] = None, rng=None):
        if mode not in ("hdp", "dynamic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.hyper = hyper
        self.mode = mode
        self.V = V
        self.rng = np.random.default_rng(rng)
        self.fixed = topics is not None
        if self.fixed:
            topics = np.asarray(topics, dtype=float)
            if topics.ndim != 2 or topics.shape[1] != V:
                raise ValueError("topic matrix must have shape (K, V)")
            self.phi = topics
        else:
            self.phi = np.zeros((0, V))
        self.used = np.zeros(len(self.phi), dtype=bool)
        self.m_total = np.zeros(len(self.phi))     # tables per topic so far
        self.m_prev = np.zeros(len(self.phi))      # tables per topic in the last document

    def _grow(self, n: int):
        if n > len(self.m_total):
            pad = n - len(self.m_total)
            self.m_total = np.append(self.m_total, np.zeros(pad))
            self.m_prev = np.append(self.m_prev, np.zeros(pad))
            self.used = np.append(self.used, np.zeros(pad, dtype=bool))

    def topic_weights(self, m_doc: np.ndarray) -> tuple:
        """Unnormalized weights over existing topic labels and the new-topic weight."""
        h = self.hyper
        if self.mode == "hdp":
            w = self.m_total + m_doc
        else:
            w = m_doc + self.m_prev + h.delta * (self.m_total + m_doc)
        w = np.where(self.used, w, 0.0)
        return w, h.gamma

    def new_topic_phi(self) -> np.ndarray:
        """Distribution of a word served by a fresh draw from the base measure."""
        if self.fixed:
            return self.phi.mean(axis=0)
        return np.full(self.V, 1.0 / self.V)

    def _new_topic(self) -> int:
        if self.fixed:
            k = int(self.rng.integers(len(self.phi)))
        else:
            self.phi = np.vstack([self.phi, self.rng.dirichlet(np.full(self.V, self.hyper.eta))])
            k = len(self.phi) - 1
            self._grow(k + 1)
        self.used[k] = True
        return k

    def seating(self, N: int) -> GeneratedDoc:
        """Tables and topics for one document, without words and without committing it."""
        rng, alpha = self.rng, self.hyper.alpha
        n: list = []
        topics: list = []
        m_doc = np.zeros(len(self.m_total))
        tables = np.empty(N, dtype=np.int64)
        for i in range(N):
            w = np.append(np.asarray(n, dtype=float), alpha)
            t = int(rng.choice(len(w), p=w / w.sum()))
            if t == len(n):
                wk, wnew = self.topic_weights(m_doc)
                p = np.append(wk, wnew)
                k = int(rng.choice(len(p), p=p / p.sum()))
                if k == len(wk):
                    k = self._new_topic()
                    m_doc = np.append(m_doc, np.zeros(len(self.m_total) - len(m_doc)))
                n.append(0)
                topics.append(k)
                m_doc[k] += 1
            n[t] += 1
            tables[i] = t
        return GeneratedDoc(tables, np.asarray(topics, dtype=np.int64), np.empty(0, dtype=np.int64))

    def emit(self, doc: GeneratedDoc) -> GeneratedDoc:
        """Draw the words of ``doc`` and make it the previous document."""
        for k in doc.topics:
            self.used[k] = True
        phi = self.phi
        words = np.array([self.rng.choice(self.V, p=phi[doc.topics[t]]) for t in doc.tables],
                         dtype=np.int64)
        m_doc = np.bincount(doc.topics, minlength=len(self.m_total)).astype(float)
        self.m_total += m_doc
        self.m_prev = m_doc
        return GeneratedDoc(doc.tables, doc.topics, words)


def forward_generate(hyper: HyperParams, J: int, N, mode: str = "dynamic",
                     topics: Optional[np.ndarray] = None, rng=None, V: Optional[int] = None):
    """Sample a corpus and its latent seating from the franchise process.

    ``N`` is one length or a sequence of ``J`` lengths.  Returns ``(corpus, state)``
    with ``state.phi`` holding the word distribution of every state topic.
    """
    lengths = np.broadcast_to(np.asarray(N, dtype=np.int64), (J,))
    if np.any(lengths < 1):
        raise ValueError("document lengths must be positive")
    if topics is not None:
        V = np.asarray(topics).shape[1]
    elif V is None:
        raise ValueError("V is required when topics are not fixed")
    gen = SequenceGenerator(hyper, V, mode, topics, rng)
    docs = [gen.emit(gen.seating(int(n))) for n in lengths]
    corpus = Corpus(Vocabulary(V), tuple(Document(d.words, j) for j, d in enumerate(docs)))
    state = CrfState.from_assignments(corpus, [d.tables for d in docs], [d.topics for d in docs])
    state.phi = gen.phi[state.topic_labels]
    return corpus, state
