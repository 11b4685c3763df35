"""Compiled driver for long random seat/unseat sequences on a CrfState."""
import numpy as np
from numba import njit

from dynhdp.crf import seat_kernel, unseat_kernel


@njit(cache=True)
def counts_ok(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox):
    J = ntab.shape[0]
    K = Kbox[0]
    cap = m_dot.shape[0]
    mm = np.zeros_like(m)
    kw = np.zeros_like(nkw)
    for j in range(J):
        base = doc_off[j]
        N = doc_off[j + 1] - base
        T = ntab[j]
        cnt = np.zeros(max(N, 1), dtype=np.int64)
        for i in range(base, base + N):
            t = t_assign[i]
            if t < 0 or t >= T:
                return False
            cnt[t] += 1
            k = k_tab[base + t]
            if k < 0 or k >= K:
                return False
            kw[k, words[i]] += 1
        for t in range(N):
            if t < T:
                if cnt[t] != n_tab[base + t] or cnt[t] < 1:
                    return False
                mm[j, k_tab[base + t]] += 1
            elif n_tab[base + t] != 0 or k_tab[base + t] != -1:
                return False
    for k in range(cap):
        tot = 0
        for j in range(J):
            if mm[j, k] != m[j, k]:
                return False
            tot += mm[j, k]
        if tot != m_dot[k]:
            return False
        if (k < K) != (tot > 0):
            return False
        s = 0
        for w in range(nkw.shape[1]):
            if kw[k, w] != nkw[k, w]:
                return False
            s += kw[k, w]
        if s != nk[k]:
            return False
    for j in range(J):
        if m[j].sum() != ntab[j]:
            return False
    return True


@njit(cache=True)
def _same(a, b):
    return a.shape == b.shape and np.all(a == b)


@njit(cache=True)
def random_moves(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
                 tok_doc, u, n_ops):
    """Returns ``(ops done, identity failures, invariant failures)``."""
    n_tok = tok_doc.shape[0]
    bad_identity = 0
    bad_counts = 0
    p = 0
    for op in range(n_ops):
        i = int(u[p] * n_tok)
        p += 1
        j = tok_doc[i]
        c = (t_assign.copy(), ntab.copy(), n_tab.copy(), k_tab.copy(), m.copy(),
             m_dot.copy(), nkw.copy(), nk.copy(), Kbox.copy())
        t, k, tr, kr = unseat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot,
                                     nkw, nk, Kbox, j, i)
        seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
                    j, i, t, k, tr, kr)
        if not (_same(c[0], t_assign) and _same(c[1], ntab) and _same(c[2], n_tab)
                and _same(c[3], k_tab) and _same(c[4], m) and _same(c[5], m_dot)
                and _same(c[6], nkw) and _same(c[7], nk) and _same(c[8], Kbox)):
            bad_identity += 1
        # random relocation: existing table, new table on an existing topic, or a new topic
        unseat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox, j, i)
        T = ntab[j]
        K = Kbox[0]
        r = u[p]
        p += 1
        pos = u[p]
        p += 1
        if T > 0 and r < 0.5:
            seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
                        j, i, int(pos * T), -1, False, False)
        elif K > 0 and r < 0.8:
            seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
                        j, i, int(pos * (T + 1)), int(u[p] * K), True, False)
        else:
            seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
                        j, i, int(pos * (T + 1)), int(u[p] * (K + 1)), True, True)
        p += 1
        if not counts_ok(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox):
            bad_counts += 1
    return n_ops, bad_identity, bad_counts


def stress(state, n_ops, seed):
    """Run ``n_ops`` random moves on ``state`` (capacity must cover one topic per token)."""
    rng = np.random.default_rng(seed)
    tok_doc = np.repeat(np.arange(state.J), np.diff(state.doc_off))
    return random_moves(*state.arrays(), tok_doc, rng.random(4 * n_ops), n_ops)
