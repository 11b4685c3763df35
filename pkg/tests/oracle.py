"""Brute-force posterior over seating configurations of tiny corpora.

Configurations are enumerated by replaying the generative process token by
token; tables and topics get canonical labels in order of creation, so each
distinct arrangement is produced exactly once.  The probability of a
configuration is the literal product of the sequential seating and topic
draws times the Dirichlet-multinomial likelihood of each topic's words.
"""
from collections import defaultdict
from math import lgamma, exp, log

import numpy as np


def _topic_weights(mode, hyper, doc_m, prev_m, total_m, K):
    if mode == "hdp":
        return [total_m[k] for k in range(K)]
    return [doc_m[k] + prev_m[k] + hyper.delta * total_m[k] for k in range(K)]


def enumerate_posterior(docs, V, hyper, mode):
    """Map canonical configuration -> posterior probability."""
    flat = [(j, i) for j, d in enumerate(docs) for i in range(len(d))]
    out = {}

    def rec(pos, tables, topics_of_tables, logp, doc_m, prev_m, total_m, K):
        if pos == len(flat):
            # words given topics
            words_by_topic = defaultdict(list)
            for (j, i), t in zip(flat, tables):
                words_by_topic[topics_of_tables[j][t]].append(docs[j][i])
            ll = 0.0
            for ws in words_by_topic.values():
                counts = np.bincount(ws, minlength=V)
                ll += lgamma(V * hyper.eta) - lgamma(V * hyper.eta + len(ws))
                ll += sum(lgamma(c + hyper.eta) - lgamma(hyper.eta) for c in counts)
            key = tuple((t, topics_of_tables[j][t]) for (j, _), t in zip(flat, tables))
            out[key] = out.get(key, 0.0) + exp(logp + ll)
            return
        j, i = flat[pos]
        if i == 0 and j > 0:
            prev_m, doc_m = doc_m, [0] * len(doc_m)
        if i == 0 and j == 0:
            doc_m = [0] * len(doc_m)
        n = [0] * len(topics_of_tables[j])
        for (jj, _), t in zip(flat[:pos], tables):
            if jj == j:
                n[t] += 1
        denom = i + hyper.alpha
        for t in range(len(n)):
            rec(pos + 1, tables + [t], topics_of_tables, logp + log(n[t] / denom),
                doc_m, prev_m, total_m, K)
        # new table
        w = _topic_weights(mode, hyper, doc_m, prev_m, total_m, K)
        z = sum(w) + hyper.gamma
        lt = log(hyper.alpha / denom)
        t_new = len(n)
        for k in range(K + 1):
            wk = w[k] if k < K else hyper.gamma
            if wk <= 0:
                continue
            K2 = max(K, k + 1)
            dm = list(doc_m) + [0] * (K2 - len(doc_m))
            pm = list(prev_m) + [0] * (K2 - len(prev_m))
            tm = list(total_m) + [0] * (K2 - len(total_m))
            dm[k] += 1
            tm[k] += 1
            tot = [list(x) for x in topics_of_tables]
            tot[j].append(k)
            rec(pos + 1, tables + [t_new], tot, logp + lt + log(wk / z), dm, pm, tm, K2)

    rec(0, [], [[] for _ in docs], 0.0, [0], [0], [0], 0)
    Z = sum(out.values())
    return {k: v / Z for k, v in out.items()}


def canonical_config(state):
    """Canonical key of a CrfState, comparable with ``enumerate_posterior`` keys."""
    key = []
    topic_ids = {}
    for j in range(state.J):
        local = {}
        base = state.doc_off[j]
        for i in range(state.doc_length(j)):
            t = int(state.t_assign[base + i])
            if t not in local:
                local[t] = len(local)
                k = int(state.k_tab[base + t])
                if k not in topic_ids:
                    topic_ids[k] = len(topic_ids)
            k = topic_ids[int(state.k_tab[base + t])]
            key.append((local[t], k))
    return tuple(key)


def empirical_tv(corpus, hyper, cfg, n_samples, burn_in=1000):
    from dynhdp.inference import initialize, gibbs_sweep

    docs = [d.tokens.tolist() for d in corpus.documents]
    exact = enumerate_posterior(docs, corpus.V, hyper, cfg.mode)
    rng = np.random.default_rng(cfg.seed)
    state = initialize(corpus, hyper, cfg, rng)
    counts = defaultdict(int)
    for s in range(burn_in + n_samples):
        gibbs_sweep(state, hyper, cfg, rng)
        if s >= burn_in:
            counts[canonical_config(state)] += 1
    keys = set(exact) | set(counts)
    tv = 0.5 * sum(abs(exact.get(k, 0.0) - counts.get(k, 0) / n_samples) for k in keys)
    return tv, exact, counts
