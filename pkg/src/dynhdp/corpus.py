"""Vocabularies, documents, corpora and hyperparameters, with text persistence.

Corpus file format (UTF-8, LF line endings)::

    V=<int> J=<int>
    <token ids separated by spaces>[ #label=<normal|abnormal>]
    ...

One line per document, in temporal order.  An empty line (or a line holding
only a label comment) is an empty document.  The count-vector variant uses
``word:count`` pairs instead of raw token ids and expands to a token list
sorted by word id.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

LABELS = ("normal", "abnormal", "unlabeled")


class MalformedCorpusError(ValueError):
    """Corpus file content violates the format or the vocabulary bounds."""


class InvalidHyperparameterError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    size: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"vocabulary size must be >= 1, got {self.size}")
        if self.labels is not None:
            if len(self.labels) != self.size:
                raise ValueError("one label per word id is required")
            if len(set(self.labels)) != len(self.labels):
                raise ValueError("word labels must be unique")

    def __len__(self):
        return self.size


@dataclass(frozen=True, eq=False)
class Document:
    tokens: np.ndarray
    index: int = 0
    label: str = "unlabeled"

    def __post_init__(self):
        toks = np.asarray(self.tokens, dtype=np.int64).reshape(-1)
        toks.setflags(write=False)
        object.__setattr__(self, "tokens", toks)
        if self.label not in LABELS:
            raise ValueError(f"unknown document label {self.label!r}")

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.index == other.index
            and self.label == other.label
            and np.array_equal(self.tokens, other.tokens)
        )

    __hash__ = None


@dataclass(frozen=True)
class Corpus:
    vocabulary: Vocabulary
    documents: tuple = field(default_factory=tuple)

    def __post_init__(self):
        docs = tuple(self.documents)
        object.__setattr__(self, "documents", docs)
        V = self.vocabulary.size
        for d in docs:
            if len(d) and (d.tokens.min() < 0 or d.tokens.max() >= V):
                raise MalformedCorpusError(
                    f"document {d.index}: token id out of range for V={V}"
                )

    @classmethod
    def from_token_lists(
        cls,
        V: int,
        docs: Iterable[Sequence[int]],
        labels: Optional[Sequence[str]] = None,
    ) -> "Corpus":
        docs = list(docs)
        if labels is None:
            labels = ["unlabeled"] * len(docs)
        return cls(
            Vocabulary(V),
            tuple(Document(t, j, lab) for j, (t, lab) in enumerate(zip(docs, labels))),
        )

    @property
    def V(self) -> int:
        return self.vocabulary.size

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, j):
        return self.documents[j]

    def lengths(self) -> np.ndarray:
        return np.array([len(d) for d in self.documents], dtype=np.int64)

    def labels(self) -> list:
        return [d.label for d in self.documents]


@dataclass(frozen=True)
class HyperParams:
    """Concentrations of the franchise plus the symmetric Dirichlet base measure.

    ``delta`` weights the corpus-wide table counts when a table picks its
    topic; ``delta=0`` keeps only the current and previous document.
    """

    alpha: float = 1.0
    gamma: float = 1.0
    delta: float = 0.001
    eta: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "gamma", "eta"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidHyperparameterError(f"{name} must be > 0, got {v}")
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise InvalidHyperparameterError(f"delta must be >= 0, got {self.delta}")


def _parse_header(line: str, path) -> tuple:
    fields = dict(part.split("=", 1) for part in line.split() if "=" in part)
    try:
        V = int(fields["V"])
        J = int(fields["J"])
    except (KeyError, ValueError):
        raise MalformedCorpusError(f"{path}:1: expected header 'V=<int> J=<int>', got {line!r}")
    if V < 1 or J < 0:
        raise MalformedCorpusError(f"{path}:1: invalid header values V={V} J={J}")
    return V, J


def _split_label(line: str, path, lineno: int) -> tuple:
    body, sep, comment = line.partition("#")
    label = "unlabeled"
    if sep:
        comment = comment.strip()
        if not comment.startswith("label="):
            raise MalformedCorpusError(f"{path}:{lineno}: unknown comment {comment!r}")
        label = comment[len("label="):]
        if label not in ("normal", "abnormal"):
            raise MalformedCorpusError(f"{path}:{lineno}: unknown label {label!r}")
    return body, label


def load_corpus(path, format: str = "token-list") -> Corpus:
    """Read a corpus file; ``format`` is ``"token-list"`` or ``"count-vector"``."""
    if format not in ("token-list", "count-vector"):
        raise ValueError(f"unknown corpus format {format!r}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedCorpusError(f"{path}: empty file, missing header")
    V, J = _parse_header(lines[0], path)
    body = lines[1:]
    if len(body) != J:
        raise MalformedCorpusError(f"{path}: header declares J={J} documents, found {len(body)}")
    docs = []
    for j, line in enumerate(body):
        lineno = j + 2
        text, label = _split_label(line, path, lineno)
        try:
            if format == "token-list":
                toks = [int(x) for x in text.split()]
            else:
                toks = []
                for pair in text.split():
                    w, c = pair.split(":")
                    w, c = int(w), int(c)
                    if c < 0:
                        raise MalformedCorpusError(f"{path}:{lineno}: negative count for word {w}")
                    toks.append((w, c))
                toks = [w for w, c in sorted(toks) for _ in range(c)]
        except ValueError as exc:
            if isinstance(exc, MalformedCorpusError):
                raise
            raise MalformedCorpusError(f"{path}:{lineno}: cannot parse {text!r}") from exc
        for w in toks:
            if w < 0 or w >= V:
                raise MalformedCorpusError(f"{path}:{lineno}: token id {w} outside 0..{V - 1}")
        docs.append(Document(np.array(toks, dtype=np.int64), j, label))
    return Corpus(Vocabulary(V), tuple(docs))


def format_corpus(corpus: Corpus) -> str:
    out = [f"V={corpus.V} J={len(corpus)}"]
    for d in corpus.documents:
        line = " ".join(map(str, d.tokens.tolist()))
        if d.label != "unlabeled":
            line = f"{line} #label={d.label}" if line else f"#label={d.label}"
        out.append(line)
    return "\n".join(out) + "\n"


def save_corpus(corpus: Corpus, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_corpus(corpus))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write corpus to {os.fspath(path)}: {exc.strerror}") from exc
