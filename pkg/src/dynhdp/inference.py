"""Batch and online Gibbs samplers and the persisted model snapshot.

The batch sampler runs over a training corpus with the topic-word
distributions integrated out.  Its final state is frozen into a
``ModelSnapshot``; test documents are then processed one at a time by
``online_infer``, which holds the snapshot fixed while sampling and folds the
document's counts in afterwards.

Snapshot text format (version 1)::

    dynhdp-snapshot 1
    V=<int> K=<int>
    alpha=<float> gamma=<float> delta=<float> eta=<float>
    mode=<hdp|dynamic> sweeps=<int> seed=<int>
    m_dot <K ints>
    m_last <K ints>
    topic_total <K ints>
    topic_word <k> <V ints>        (one line per topic, k = 0..K-1)
    end

Floats are written with ``repr`` so a round trip is exact.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as kern
from .anomaly import DocResult, predictive_loglik
from .corpus import Corpus, Document, HyperParams
from .crf import CrfState

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
MODES = ("hdp", "dynamic")


class SnapshotFormatError(ValueError):
    pass


class UnsupportedVersionError(SnapshotFormatError):
    pass


class VocabularyMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GibbsConfig:
    sweeps: int = 500
    burn_in: int = 100
    sample_lag: int = 2
    chains: int = 1
    seed: int = 0
    mode: str = "dynamic"
    # "exact" conditions a table's topic on every later document;
    # "local" uses only the document's own and previous counts
    dynamic_conditional: str = "exact"
    threads: int = 1
    validate: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dynamic_conditional not in ("exact", "local"):
            raise ValueError(f"unknown dynamic_conditional {self.dynamic_conditional!r}")
        if not self.sweeps > self.burn_in >= 0:
            raise ValueError("need sweeps > burn_in >= 0")
        if self.sample_lag < 1 or self.chains < 1 or self.threads < 1:
            raise ValueError("sample_lag, chains and threads must be >= 1")

    @classmethod
    def online(cls, **kw) -> "GibbsConfig":
        """Defaults for per-document sampling: 50 sweeps, 20 samples two sweeps apart."""
        kw.setdefault("sweeps", 50)
        kw.setdefault("burn_in", 10)
        kw.setdefault("sample_lag", 2)
        return cls(**kw)

    @property
    def n_samples(self) -> int:
        return (self.sweeps - self.burn_in) // self.sample_lag

    @property
    def kernel_mode(self) -> int:
        if self.mode == "hdp":
            return kern.MODE_HDP
        if self.dynamic_conditional == "exact":
            return kern.MODE_DYNAMIC_EXACT
        return kern.MODE_DYNAMIC_LOCAL


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    hyper: HyperParams
    topic_word_count: np.ndarray   # (K, V)
    topic_total: np.ndarray        # (K,)
    m_dot: np.ndarray              # (K,)
    m_last: np.ndarray             # (K,) table counts of the most recent document
    mode: str = "dynamic"
    sweeps: int = 0
    seed: int = 0
    version: int = SNAPSHOT_VERSION

    def __post_init__(self):
        for name in ("topic_word_count", "topic_total", "m_dot", "m_last"):
            a = np.array(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        K = len(self.m_dot)
        if self.topic_word_count.ndim != 2 or self.topic_word_count.shape[0] != K:
            raise ValueError("topic_word_count must have one row per topic")
        if self.topic_total.shape != (K,) or self.m_last.shape != (K,):
            raise ValueError("per-topic arrays must have length K")
        if np.any(self.topic_word_count < 0) or np.any(self.m_dot < 0) or np.any(self.m_last < 0):
            raise ValueError("snapshot counts must be non-negative")
        if not np.array_equal(self.topic_word_count.sum(axis=1), self.topic_total):
            raise ValueError("topic totals disagree with topic-word counts")

    @property
    def K(self) -> int:
        return len(self.m_dot)

    @property
    def V(self) -> int:
        return self.topic_word_count.shape[1]

    def phi_estimate(self) -> np.ndarray:
        """Posterior-mean topic-word distributions, one row per topic."""
        eta = self.hyper.eta
        return (self.topic_word_count + eta) / (self.topic_total[:, None] + self.V * eta)

    def __eq__(self, other):
        if not isinstance(other, ModelSnapshot):
            return NotImplemented
        return (
            self.hyper == other.hyper
            and self.mode == other.mode
            and self.sweeps == other.sweeps
            and self.seed == other.seed
            and self.version == other.version
            and np.array_equal(self.topic_word_count, other.topic_word_count)
            and np.array_equal(self.m_dot, other.m_dot)
            and np.array_equal(self.m_last, other.m_last)
        )

    __hash__ = None

    @classmethod
    def from_state(cls, state: CrfState, hyper: HyperParams, mode: str = "dynamic",
                   sweeps: int = 0, seed: int = 0) -> "ModelSnapshot":
        K = state.K
        last = state.m[state.J - 1, :K] if state.J else np.zeros(K, dtype=np.int64)
        return cls(hyper, state.nkw[:K].copy(), state.nk[:K].copy(), state.m_dot[:K].copy(),
                   last.copy(), mode, sweeps, seed)


# ---------------------------------------------------------------------------
# batch


def _run_sweep(state: CrfState, hyper: HyperParams, mode: int, uniforms, tables_only=False):
    upos, j = 0, 0
    while j < state.J:
        j, upos = kern.sweep_docs(*state.arrays(), hyper.alpha, hyper.gamma, hyper.delta,
                                  hyper.eta, mode, uniforms, upos, j, state.J, tables_only)
        if j < state.J:
            state.ensure_capacity(state.K + 2 * state.doc_length(j) + 2)


def log_joint(state: CrfState, hyper: HyperParams, mode: str = "dynamic") -> float:
    kmode = kern.MODE_HDP if mode == "hdp" else kern.MODE_DYNAMIC_EXACT
    return float(kern.log_joint(*state.arrays(), hyper.alpha, hyper.gamma, hyper.delta,
                                hyper.eta, kmode))


def initialize(corpus: Corpus, hyper: HyperParams, cfg: GibbsConfig, rng) -> CrfState:
    """Seat tokens one by one from their conditional given the tokens before them."""
    state = CrfState(corpus, capacity=32)
    total = int(state.doc_off[-1])
    _run_sweep(state, hyper, cfg.kernel_mode, rng.random(total), tables_only=True)
    return state


def gibbs_sweep(state: CrfState, hyper: HyperParams, cfg: GibbsConfig, rng) -> None:
    total = int(state.doc_off[-1])
    _run_sweep(state, hyper, cfg.kernel_mode, rng.random(2 * total))


def _run_chain(corpus, hyper, cfg, seed_seq, callback=None):
    rng = np.random.default_rng(seed_seq)
    state = initialize(corpus, hyper, cfg, rng)
    for sweep in range(cfg.sweeps):
        gibbs_sweep(state, hyper, cfg, rng)
        if cfg.validate:
            state.validate()
        if callback is not None:
            callback(sweep, state)
    return state


def batch_train(corpus: Corpus, hyper: HyperParams, cfg: GibbsConfig, callback=None):
    """Fit the model to a training corpus; returns ``(snapshot, final_state)``.

    With several chains the one ending at the highest joint log-probability
    provides the snapshot.  ``callback(sweep, state)`` runs after each sweep
    (single-chain runs only).
    """
    if len(corpus) == 0 or corpus.lengths().sum() == 0:
        raise ValueError("cannot train on an empty corpus")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    if cfg.chains == 1:
        states = [_run_chain(corpus, hyper, cfg, seeds[0], callback)]
    else:
        with ThreadPoolExecutor(max_workers=min(cfg.threads, cfg.chains)) as pool:
            states = list(pool.map(lambda s: _run_chain(corpus, hyper, cfg, s), seeds))
    scores = [log_joint(s, hyper, cfg.mode) for s in states]
    best = int(np.argmax(scores))
    log.info("batch_train: %d chain(s), log joint %s, K=%d", cfg.chains,
             ", ".join(f"{x:.1f}" for x in scores), states[best].K)
    snap = ModelSnapshot.from_state(states[best], hyper, cfg.mode, cfg.sweeps, cfg.seed)
    return snap, states[best]


# ---------------------------------------------------------------------------
# online


def topic_prior(snapshot: ModelSnapshot, prev_local, hyper: HyperParams, mode: str) -> np.ndarray:
    """Pseudo-counts of snapshot topics for a new table in the next document."""
    m_dot = snapshot.m_dot.astype(float)
    if mode == "hdp":
        return m_dot
    prev = np.zeros(snapshot.K)
    if prev_local is not None:
        p = np.asarray(prev_local, dtype=float)
        prev[:min(len(p), snapshot.K)] = p[:snapshot.K]
    return prev + hyper.delta * m_dot


@dataclass
class OnlineState:
    """Seating of a single document against frozen snapshot topics."""
    t_assign: np.ndarray
    n_tab: np.ndarray
    k_tab: np.ndarray
    mloc: np.ndarray
    n_local: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    ntab: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    @classmethod
    def empty(cls, N: int, K: int) -> "OnlineState":
        return cls(np.full(N, -1, dtype=np.int64), np.zeros(N, dtype=np.int64),
                   np.full(N, -1, dtype=np.int64), np.zeros(K + N, dtype=np.int64))

    @property
    def T(self) -> int:
        return int(self.ntab[0])


def online_infer(snapshot: ModelSnapshot, prev_local, doc: Document, hyper: HyperParams,
                 cfg: GibbsConfig, rng=None, update: bool = True):
    """Sample one document's tables and topics with the snapshot held fixed.

    Returns ``(result, snapshot)``.  The returned snapshot has the document's
    table and word counts added (new topics appended); the input snapshot is
    never modified.  ``result.topic_counts`` holds the document's tables per
    topic, indexed like the returned snapshot, for use as ``prev_local`` of
    the next document.
    """
    tokens = np.asarray(doc.tokens, dtype=np.int64)
    if len(tokens) and tokens.max() >= snapshot.V:
        raise VocabularyMismatchError(
            f"document {doc.index} has word id {int(tokens.max())} but the model has V={snapshot.V}"
        )
    K = snapshot.K
    N = len(tokens)
    if N == 0:
        return DocResult(doc.index, float("nan"), False, np.empty(0),
                         np.zeros(K, dtype=np.int64)), snapshot
    rng = np.random.default_rng(rng)
    phi = snapshot.phi_estimate()
    prior = topic_prior(snapshot, prev_local, hyper, cfg.mode)
    st = OnlineState.empty(N, K)
    out = np.empty(cfg.n_samples)
    upos, written = kern.online_sweeps(
        tokens, st.t_assign, st.n_tab, st.k_tab, st.mloc, st.n_local, st.ntab,
        np.log(phi), prior, hyper.alpha, hyper.gamma, cfg.sweeps,
        rng.random((cfg.sweeps + 1) * 2 * N), 0, cfg.burn_in, cfg.sample_lag, phi, out, True)
    samples = out[:written]
    result = DocResult(doc.index, predictive_loglik(samples, N), True, samples,
                       st.mloc[:K + int(st.n_local[0])].copy())
    new_snap = absorb(snapshot, tokens, st) if update else snapshot
    return result, new_snap


def absorb(snapshot: ModelSnapshot, tokens: np.ndarray, st: OnlineState) -> ModelSnapshot:
    """Add a sampled document's counts to the global statistics."""
    K, V = snapshot.K, snapshot.V
    K2 = K + int(st.n_local[0])
    nkw = np.zeros((K2, V), dtype=np.int64)
    nkw[:K] = snapshot.topic_word_count
    topics = st.k_tab[st.t_assign]
    np.add.at(nkw, (topics, tokens), 1)
    m_doc = st.mloc[:K2]
    m_dot = np.concatenate([snapshot.m_dot, np.zeros(K2 - K, dtype=np.int64)]) + m_doc
    return replace(snapshot, topic_word_count=nkw, topic_total=nkw.sum(axis=1), m_dot=m_dot,
                   m_last=m_doc.copy())


# ---------------------------------------------------------------------------
# persistence


def format_snapshot(s: ModelSnapshot) -> str:
    h = s.hyper
    ints = lambda a: " ".join(str(int(x)) for x in a)  # noqa: E731
    lines = [
        f"dynhdp-snapshot {s.version}",
        f"V={s.V} K={s.K}",
        f"alpha={h.alpha!r} gamma={h.gamma!r} delta={h.delta!r} eta={h.eta!r}",
        f"mode={s.mode} sweeps={s.sweeps} seed={s.seed}",
        f"m_dot {ints(s.m_dot)}".rstrip(),
        f"m_last {ints(s.m_last)}".rstrip(),
        f"topic_total {ints(s.topic_total)}".rstrip(),
    ]
    lines += [f"topic_word {k} {ints(row)}" for k, row in enumerate(s.topic_word_count)]
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_snapshot(snapshot: ModelSnapshot, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_snapshot(snapshot))


def _kv(line: str, lineno: int) -> dict:
    try:
        return dict(part.split("=", 1) for part in line.split())
    except ValueError:
        raise SnapshotFormatError(f"line {lineno}: expected key=value pairs, got {line!r}")


def parse_snapshot(text: str) -> ModelSnapshot:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def need(n):
        if len(lines) < n:
            raise SnapshotFormatError(f"line {len(lines) + 1}: unexpected end of file")

    need(1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != "dynhdp-snapshot":
        raise SnapshotFormatError(f"line 1: not a snapshot header: {lines[0]!r}")
    try:
        version = int(head[1])
    except ValueError:
        raise SnapshotFormatError(f"line 1: bad version {head[1]!r}")
    if version != SNAPSHOT_VERSION:
        raise UnsupportedVersionError(
            f"line 1: snapshot version {version} is not supported (expected {SNAPSHOT_VERSION})")
    need(4)
    try:
        shape = _kv(lines[1], 2)
        V, K = int(shape["V"]), int(shape["K"])
        hp = _kv(lines[2], 3)
        hyper = HyperParams(float(hp["alpha"]), float(hp["gamma"]), float(hp["delta"]),
                            float(hp["eta"]))
        meta = _kv(lines[3], 4)
        mode, sweeps, seed = meta["mode"], int(meta["sweeps"]), int(meta["seed"])
    except (KeyError, ValueError) as exc:
        if isinstance(exc, SnapshotFormatError):
            raise
        raise SnapshotFormatError(f"lines 2-4: malformed header field: {exc}") from exc

    def row(lineno, tag, n):
        need(lineno)
        parts = lines[lineno - 1].split()
        if not parts or parts[0] != tag:
            raise SnapshotFormatError(f"line {lineno}: expected {tag!r}")
        try:
            vals = [int(x) for x in parts[1:]]
        except ValueError:
            raise SnapshotFormatError(f"line {lineno}: non-integer count")
        if len(vals) != n:
            raise SnapshotFormatError(f"line {lineno}: expected {n} values, got {len(vals)}")
        return np.array(vals, dtype=np.int64)

    m_dot = row(5, "m_dot", K)
    m_last = row(6, "m_last", K)
    total = row(7, "topic_total", K)
    nkw = np.zeros((K, V), dtype=np.int64)
    for k in range(K):
        r = row(8 + k, "topic_word", V + 1)
        if r[0] != k:
            raise SnapshotFormatError(f"line {8 + k}: expected topic {k}, got {r[0]}")
        nkw[k] = r[1:]
    need(8 + K)
    if lines[7 + K] != "end" or len(lines) != 8 + K:
        raise SnapshotFormatError(f"line {8 + K}: expected 'end' as the final line")
    try:
        return ModelSnapshot(hyper, nkw, total, m_dot, m_last, mode, sweeps, seed, version)
    except ValueError as exc:
        raise SnapshotFormatError(f"inconsistent snapshot: {exc}") from exc


def load_snapshot(path) -> ModelSnapshot:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_snapshot(fh.read())
