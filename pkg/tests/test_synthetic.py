import math

import numpy as np
import pytest
from scipy import stats

from dynhdp.anomaly import roc_auc
from dynhdp.corpus import Corpus, HyperParams
from dynhdp.synthetic import (
    BARS_HYPER,
    N_BARS,
    V_BARS,
    BarsSpec,
    BarsTruth,
    GenerationError,
    bar_topics,
    generate_bars,
    load_truth,
    save_truth,
    split,
    true_model_score,
)


def test_bar_topics():
    phi = bar_topics()
    assert phi.shape == (N_BARS, V_BARS)
    np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-15)
    assert np.flatnonzero(phi[0]).tolist() == [0, 1, 2, 3, 4]
    assert np.all(phi[0, :5] == 0.2)
    assert np.flatnonzero(phi[5]).tolist() == [0, 5, 10, 15, 20]


def test_spec_validation():
    with pytest.raises(ValueError):
        BarsSpec(abnormal_fraction=1.5)
    with pytest.raises(ValueError):
        BarsSpec(doc_length=0)
    with pytest.raises(ValueError):
        BarsSpec(n_train=2, n_test=2, abnormal_positions=(0,))
    assert BarsSpec().J == 400


@pytest.fixture(scope="module")
def bars():
    return generate_bars(BarsSpec(n_train=60, n_test=60, doc_length=40), rng=4)


def test_labels_and_positions(bars):
    corpus, truth = bars
    assert corpus.V == 25 and len(corpus) == 120
    labels = corpus.labels()
    assert all(lab == "normal" for lab in labels[:60])
    assert sum(lab == "abnormal" for lab in labels[60:]) == 6
    spec = BarsSpec(n_train=5, n_test=5, doc_length=10, abnormal_positions=(3, 7))
    c, _ = generate_bars(spec, rng=0)
    assert [j for j, lab in enumerate(c.labels()) if lab == "abnormal"] == [3, 7]
    c, _ = generate_bars(BarsSpec(n_train=5, n_test=5, abnormal_fraction=0.0), rng=0)
    assert set(c.labels()) == {"normal"}


def test_abnormal_topics_disjoint_from_previous(bars):
    corpus, truth = bars
    for j, lab in enumerate(truth.labels):
        if lab == "abnormal":
            assert not set(truth.topics[j]) & set(truth.topics[j - 1])


def test_words_follow_topics(bars):
    corpus, truth = bars
    phi = bar_topics()
    for j, doc in enumerate(corpus):
        k = np.asarray(truth.topics[j])[np.asarray(truth.tables[j])]
        assert np.all(phi[k, doc.tokens] > 0)


def test_deterministic():
    a, ta = generate_bars(BarsSpec(n_train=10, n_test=10, doc_length=20), rng=9)
    b, tb = generate_bars(BarsSpec(n_train=10, n_test=10, doc_length=20), rng=9)
    assert a == b and all(np.array_equal(x, y) for x, y in zip(ta.topics, tb.topics))


def test_word_frequencies_match_mixture():
    corpus, truth = generate_bars(BarsSpec(n_train=500, n_test=500, doc_length=100), rng=1)
    tokens = np.concatenate([d.tokens for d in corpus])
    assert len(tokens) == 100_000
    observed = np.bincount(tokens, minlength=V_BARS)
    weights = sum(truth.mixture(j) * len(corpus[j]) for j in range(truth.J))
    expected = weights @ bar_topics()
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_no_free_topic_raises():
    # one token per document, each table gets a new bar while any is unused;
    # force the previous document to use all ten bars
    h = HyperParams(alpha=1e6, gamma=1e6, delta=0.0, eta=0.5)
    spec = BarsSpec(n_train=1, n_test=1, doc_length=400, abnormal_positions=(1,))
    with pytest.raises(GenerationError):
        generate_bars(spec, h, rng=0)


def test_split_reindexes(bars):
    corpus, _ = bars
    train, test = split(corpus, 60)
    assert len(train) == 60 and [d.index for d in test][:3] == [0, 1, 2]
    assert np.array_equal(test[0].tokens, corpus[60].tokens)


def test_truth_round_trip(tmp_path, bars):
    _, truth = bars
    save_truth(truth, tmp_path / "t.txt")
    back = load_truth(tmp_path / "t.txt")
    assert back.labels == truth.labels and back.hyper == truth.hyper
    assert all(np.array_equal(a, b) for a, b in zip(back.tables, truth.tables))
    assert all(np.array_equal(a, b) for a, b in zip(back.topics, truth.topics))


# -- true-model score ------------------------------------------------------


def bar_word(k):
    """A word in bar k's support."""
    return k * 5 if k < 5 else k - 5


def chain_truth(doc_bars, last_word, hyper):
    """One table per bar in each context document, then a one-token document on bar 0."""
    tables, topics, words = [], [], []
    for bars in doc_bars:
        tables.append(np.arange(len(bars)))
        topics.append(np.array(bars))
        words.append([bar_word(k) for k in bars])
    tables.append(np.array([0]))
    topics.append(np.array([0]))
    words.append([last_word])
    n = len(words)
    return (Corpus.from_token_lists(V_BARS, words),
            BarsTruth(hyper, n - 1, tables, topics, ["normal"] * n))


def test_true_score_single_token():
    h = HyperParams(alpha=1.0, gamma=1.0, delta=0.0, eta=0.5)
    # previous document holds every bar once, plus gamma / 10 per bar: uniform
    # prior over bars; word 3 lies in bar 0 (row 0) and bar 8 (column 3)
    corpus, truth = chain_truth([list(range(10))], 3, h)
    res = true_model_score(truth, corpus, start=1)[0]
    assert res.normalized_loglik == pytest.approx(math.log(2 * 0.1 * 0.2), abs=1e-12)
    # previous document used only bar 0: weights 1.1 on bar 0, 0.1 elsewhere
    corpus, truth = chain_truth([list(range(10)), [0]], 3, h)
    res = true_model_score(truth, corpus, start=2)[0]
    assert res.abnormality_score == pytest.approx(-math.log((1.1 + 0.1) * 0.2 / 2.0), abs=1e-12)
    # with a vanishing base measure all mass sits on bar 0: score = -log phi_0[w]
    h0 = HyperParams(alpha=1.0, gamma=1e-300, delta=0.0, eta=0.5)
    corpus, truth = chain_truth([list(range(10)), [0]], 3, h0)
    res = true_model_score(truth, corpus, start=2)[0]
    assert res.abnormality_score == pytest.approx(-math.log(0.2), abs=1e-12)


def test_true_score_matched_beats_uniform(bars):
    corpus, truth = bars
    phi = bar_topics()
    # same document length; one document follows its predecessor's bars, one spreads words uniformly
    j = 61
    while truth.labels[j] != "normal":
        j += 1
    rng = np.random.default_rng(0)
    docs = [d.tokens.tolist() for d in corpus]
    uniform = rng.integers(0, V_BARS, len(docs[j])).tolist()
    r_match = true_model_score(truth, corpus, start=j)[0]
    docs[j] = uniform
    # keep the truth's seating; words no longer fit so the likelihood drops
    bad = Corpus.from_token_lists(V_BARS, docs, corpus.labels())
    truth_bad = BarsTruth(truth.hyper, truth.n_train, truth.tables, truth.topics, truth.labels)
    r_uniform = true_model_score(truth_bad, bad, start=j)[0]
    assert r_uniform.normalized_loglik < r_match.normalized_loglik


def test_true_score_empty_and_misaligned(bars):
    corpus, truth = bars
    with pytest.raises(ValueError):
        true_model_score(truth, Corpus(corpus.vocabulary, corpus.documents[:5]))
    t = BarsTruth(BARS_HYPER, 0, [np.zeros(0, dtype=np.int64)], [np.zeros(0, dtype=np.int64)], ["normal"])
    res = true_model_score(t, Corpus.from_token_lists(V_BARS, [[]]))
    assert not res[0].defined and math.isnan(res[0].abnormality_score)


def test_true_model_detects_abnormal(bars):
    corpus, truth = bars
    res = true_model_score(truth, corpus, start=60)
    auc = roc_auc([r.abnormality_score for r in res], corpus.labels()[60:]).auc
    assert auc > 0.6
