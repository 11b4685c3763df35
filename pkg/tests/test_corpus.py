import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynhdp.corpus import (
    Corpus,
    Document,
    HyperParams,
    InvalidHyperparameterError,
    MalformedCorpusError,
    Vocabulary,
    load_corpus,
    save_corpus,
)


def write(tmp_path, text, name="c.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_token_list(tmp_path):
    c = load_corpus(write(tmp_path, "V=2 J=2\n0 0 1\n1\n"))
    assert c.V == 2 and len(c) == 2
    assert c.lengths().tolist() == [3, 1]
    assert c[0].tokens.tolist() == [0, 0, 1]


def test_empty_document_line(tmp_path):
    c = load_corpus(write(tmp_path, "V=3 J=3\n0\n\n2 2\n"))
    assert c.lengths().tolist() == [1, 0, 2]


def test_token_out_of_range(tmp_path):
    with pytest.raises(MalformedCorpusError, match="token id 2"):
        load_corpus(write(tmp_path, "V=2 J=1\n0 2\n"))


def test_count_vector_expands_sorted(tmp_path):
    c = load_corpus(write(tmp_path, "V=4 J=2\n3:1 0:2\n\n"), format="count-vector")
    assert c[0].tokens.tolist() == [0, 0, 3]
    assert len(c[1]) == 0


def test_count_vector_negative(tmp_path):
    with pytest.raises(MalformedCorpusError, match="negative"):
        load_corpus(write(tmp_path, "V=4 J=1\n1:-2\n"), format="count-vector")


@pytest.mark.parametrize("text", ["J=1\n0\n", "V=2 J=3\n0\n", "V=2 J=1\n0 x\n", "V=2 J=1\n0 #foo\n"])
def test_malformed(tmp_path, text):
    with pytest.raises(MalformedCorpusError):
        load_corpus(write(tmp_path, text))


def test_labels_round_trip(tmp_path):
    c = Corpus.from_token_lists(3, [[0, 1], [], [2]], ["normal", "abnormal", "unlabeled"])
    p = tmp_path / "c.txt"
    save_corpus(c, p)
    assert p.read_text().splitlines()[2] == "#label=abnormal"
    assert load_corpus(p) == c


def test_unwritable_directory(tmp_path):
    c = Corpus.from_token_lists(2, [[0]])
    with pytest.raises(OSError, match="missing"):
        save_corpus(c, tmp_path / "missing" / "c.txt")


def test_vocabulary_labels_unique():
    Vocabulary(2, ("a", "b"))
    with pytest.raises(ValueError):
        Vocabulary(2, ("a", "a"))
    with pytest.raises(ValueError):
        Vocabulary(0)


def test_hyperparams_validation():
    HyperParams(1.0, 1.0, 0.0, 0.5)
    for bad in [dict(alpha=0), dict(gamma=-1), dict(delta=-0.1), dict(eta=0)]:
        with pytest.raises(InvalidHyperparameterError):
            HyperParams(**bad)


def test_document_immutable():
    d = Document([1, 2], 0)
    with pytest.raises(ValueError):
        d.tokens[0] = 5


corpora = st.integers(1, 6).flatmap(
    lambda V: st.tuples(
        st.just(V),
        st.lists(
            st.tuples(st.lists(st.integers(0, V - 1), max_size=8),
                      st.sampled_from(["normal", "abnormal", "unlabeled"])),
            max_size=6,
        ),
    )
)


@settings(max_examples=60, deadline=None)
@given(corpora)
def test_round_trip_property(tmp_path_factory, spec):
    V, docs = spec
    c = Corpus.from_token_lists(V, [d for d, _ in docs], [lab for _, lab in docs])
    p = tmp_path_factory.mktemp("rt") / "c.txt"
    save_corpus(c, p)
    back = load_corpus(p)
    assert back == c
    assert [d.index for d in back] == list(range(len(docs)))
