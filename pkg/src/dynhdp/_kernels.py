"""Numba inner loops of the batch and online Gibbs samplers.

Random numbers come in as a buffer of uniforms drawn by the caller from a
seeded ``numpy.random.Generator``; every draw consumes exactly one entry.
That keeps chains reproducible and independent of numba's global RNG.

Prior modes for the topic of a table:

* ``MODE_HDP``: corpus-wide table counts.
* ``MODE_DYNAMIC_EXACT``: the full conditional of the sequential dynamic
  process, including the effect of a table's topic on every later document.
* ``MODE_DYNAMIC_LOCAL``: the per-document weights ``m[j,k] + m[j-1,k] +
  delta*m_dot[k]`` with the table removed, ignoring later documents.

The exact mode scores a topic-count matrix ``m`` (documents x topics) as
``sum_k H(column k) - sum_j D(row j)``: within a document the topic draws form
a Polya urn with prior weight ``a = m[j-1,k] + delta*sum_{r<j} m[r,k]`` and
reinforcement ``c = 1 + delta``, so both terms are rising factorials.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .crf import _drop_topic, seat_kernel, unseat_kernel

MODE_HDP = 0
MODE_DYNAMIC_EXACT = 1
MODE_DYNAMIC_LOCAL = 2

NEG_INF = -np.inf


@njit(cache=True)
def sample_log(logw, n, u):
    mx = NEG_INF
    for a in range(n):
        if logw[a] > mx:
            mx = logw[a]
    if mx == NEG_INF:
        raise AssertionError("all options have zero probability")
    total = 0.0
    for a in range(n):
        total += math.exp(logw[a] - mx)
    target = u * total
    acc = 0.0
    for a in range(n):
        acc += math.exp(logw[a] - mx)
        if acc > target:
            return a
    for a in range(n - 1, -1, -1):
        if logw[a] > NEG_INF:
            return a
    return n - 1


@njit(cache=True)
def _safe_log(x):
    if x <= 0.0:
        return NEG_INF
    return math.log(x)


# ---------------------------------------------------------------------------
# exact dynamic prior: column and row terms over documents j..J-1


@njit(cache=True)
def column_tail(m, k, j, extra, pcol, gamma, delta):
    """Log of the topic-k factors of documents >= j, with ``extra`` tables added to row j.

    ``pcol`` is the number of tables of topic k in documents before j.
    """
    J = m.shape[0]
    c = 1.0 + delta
    logc = math.log(c)
    P = pcol
    prev = m[j - 1, k] if j > 0 else 0
    total = 0.0
    for r in range(j, J):
        x = m[r, k]
        if r == j:
            x += extra
        if x > 0:
            if P == 0:
                total += math.log(gamma) + (x - 1) * logc + math.lgamma(x)
            else:
                a = prev + delta * P
                if a <= 0.0:
                    return NEG_INF
                total += x * logc + math.lgamma(a / c + x) - math.lgamma(a / c)
        P += x
        prev = x
    return total


@njit(cache=True)
def row_tail(ntab, j, extra, prow, gamma, delta):
    """Log of the normalizers of documents >= j, with ``extra`` tables added to row j."""
    J = ntab.shape[0]
    c = 1.0 + delta
    logc = math.log(c)
    P = prow
    prev = ntab[j - 1] if j > 0 else 0
    total = 0.0
    for r in range(j, J):
        x = ntab[r]
        if r == j:
            x += extra
        if x > 0:
            b = (prev + delta * P + gamma) / c
            total += x * logc + math.lgamma(b + x) - math.lgamma(b)
        P += x
        prev = x
    return total


@njit(cache=True)
def log_prior_exact(m, ntab, K, gamma, delta):
    """Log probability of the per-document topic counts under the dynamic process.

    Counts of tables by (document, topic) fully determine it; used by tests.
    """
    total = 0.0
    for k in range(K):
        total += column_tail(m, k, 0, 0, 0, gamma, delta)
    total -= row_tail(ntab, 0, 0, 0, gamma, delta)
    return total


# ---------------------------------------------------------------------------
# batch sweep


@njit(cache=True)
def _refresh_col(m, k, j, pcol, gamma, delta, h_rest, h_add):
    h_rest[k] = column_tail(m, k, j, 0, pcol[k], gamma, delta)
    h_add[k] = column_tail(m, k, j, 1, pcol[k], gamma, delta)


@njit(cache=True)
def _after_topic_drop(k, K, pcol, h_rest, h_add):
    # column K (old last) moved into k
    if k != K:
        pcol[k] = pcol[K]
        h_rest[k] = h_rest[K]
        h_add[k] = h_add[K]
    pcol[K] = 0
    h_rest[K] = 0.0
    h_add[K] = 0.0


@njit(cache=True)
def _exact_delta(k, K, h_rest, h_add, ninf):
    """Log prior ratio of adding one table of topic k to the current row."""
    if h_rest[k] == NEG_INF:
        if ninf == 1:
            return h_add[k]
        return NEG_INF
    if ninf > 0:
        return NEG_INF
    return h_add[k] - h_rest[k]


@njit(cache=True)
def _count_ninf(h_rest, K):
    c = 0
    for k in range(K):
        if h_rest[k] == NEG_INF:
            c += 1
    return c


@njit(cache=True)
def _local_prior(m, m_dot, k, j, delta):
    w = m[j, k] + delta * m_dot[k]
    if j > 0:
        w += m[j - 1, k]
    return w


@njit(cache=True, nogil=True)
def sweep_docs(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
               alpha, gamma, delta, eta, mode, uniforms, upos, j_start, j_stop,
               tables_only):
    """One Gibbs pass over documents ``j_start..j_stop-1``.

    Each document first resamples the table of every token, then the topic
    of every table.  Returns ``(next_document, next_uniform)``; the caller
    grows topic capacity and calls again when a document could overflow it.
    With ``tables_only`` unseated tokens are seated sequentially (used for
    initialization) and table topics are not resampled.
    """
    J = ntab.shape[0]
    V = nkw.shape[1]
    cap = m_dot.shape[0]
    veta = V * eta
    log_alpha = math.log(alpha)
    log_gamma = math.log(gamma)
    log_v = math.log(V)
    maxn = 0
    for j in range(J):
        n = doc_off[j + 1] - doc_off[j]
        if n > maxn:
            maxn = n
    logw = np.empty(2 * maxn + cap + 2)
    pcol = np.zeros(cap, dtype=np.int64)
    h_rest = np.zeros(cap)
    h_add = np.zeros(cap)
    order = np.empty(maxn, dtype=np.int64)
    tstart = np.empty(maxn + 1, dtype=np.int64)
    wcount = np.zeros(V, dtype=np.int64)
    exact = mode == MODE_DYNAMIC_EXACT
    d_rest = 0.0
    d_add = 0.0

    prow = 0
    for r in range(j_start):
        prow += ntab[r]

    for j in range(j_start, j_stop):
        base = doc_off[j]
        N = doc_off[j + 1] - base
        if Kbox[0] + 2 * N + 2 > cap:
            return j, upos
        if exact:
            for k in range(Kbox[0]):
                s = 0
                for r in range(j):
                    s += m[r, k]
                pcol[k] = s
                _refresh_col(m, k, j, pcol, gamma, delta, h_rest, h_add)
            d_rest = row_tail(ntab, j, 0, prow, gamma, delta)
            d_add = row_tail(ntab, j, 1, prow, gamma, delta)

        # --- table of every token -------------------------------------------
        for i in range(base, base + N):
            w = words[i]
            if t_assign[i] >= 0:
                t_old, k_old, tr, kr = unseat_kernel(doc_off, words, t_assign, ntab, n_tab,
                                                     k_tab, m, m_dot, nkw, nk, Kbox, j, i)
                if exact and tr:
                    if kr:
                        _after_topic_drop(k_old, Kbox[0], pcol, h_rest, h_add)
                    else:
                        _refresh_col(m, k_old, j, pcol, gamma, delta, h_rest, h_add)
                    d_rest = row_tail(ntab, j, 0, prow, gamma, delta)
                    d_add = row_tail(ntab, j, 1, prow, gamma, delta)
            elif tables_only:
                pass
            else:
                raise AssertionError("unseated token during a sweep")
            K = Kbox[0]
            T = ntab[j]
            ninf = _count_ninf(h_rest, K) if exact else 0

            if mode == MODE_HDP:
                mdd = 0
                for k in range(K):
                    mdd += m_dot[k]
                lz = math.log(mdd + gamma)
            elif mode == MODE_DYNAMIC_LOCAL:
                z = 0.0
                for k in range(K):
                    z += _local_prior(m, m_dot, k, j, delta)
                lz = math.log(z + gamma)
            else:
                lz = 0.0

            # existing tables
            for t in range(T):
                kt = k_tab[base + t]
                lw = math.log(n_tab[base + t]) + math.log((nkw[kt, w] + eta) / (nk[kt] + veta))
                if exact:
                    lw = lw - d_rest if ninf == 0 else NEG_INF
                logw[t] = lw
            # new table on an existing topic
            for k in range(K):
                ll = math.log((nkw[k, w] + eta) / (nk[k] + veta))
                if mode == MODE_HDP:
                    pr = math.log(m_dot[k]) - lz
                elif mode == MODE_DYNAMIC_LOCAL:
                    pr = _safe_log(_local_prior(m, m_dot, k, j, delta)) - lz
                else:
                    pr = _exact_delta(k, K, h_rest, h_add, ninf) - d_add
                logw[T + k] = log_alpha + pr + ll
            # new table on a new topic
            if exact:
                pr = log_gamma - d_add if ninf == 0 else NEG_INF
            else:
                pr = log_gamma - lz
            logw[T + K] = log_alpha + pr - log_v

            a = sample_log(logw, T + K + 1, uniforms[upos])
            upos += 1
            if a < T:
                seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk,
                            Kbox, j, i, a, -1, False, False)
            else:
                k_new = a - T
                is_new = k_new == K
                seat_kernel(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk,
                            Kbox, j, i, T, k_new, True, is_new)
                if exact:
                    if is_new:
                        pcol[k_new] = 0
                    _refresh_col(m, k_new, j, pcol, gamma, delta, h_rest, h_add)
                    d_rest = row_tail(ntab, j, 0, prow, gamma, delta)
                    d_add = row_tail(ntab, j, 1, prow, gamma, delta)

        if tables_only:
            prow += ntab[j]
            continue

        # --- topic of every table --------------------------------------------
        T = ntab[j]
        # counting sort of the document's tokens by table
        for t in range(T + 1):
            tstart[t] = 0
        for i in range(base, base + N):
            tstart[t_assign[i] + 1] += 1
        for t in range(T):
            tstart[t + 1] += tstart[t]
        fill = np.empty(T, dtype=np.int64)
        for t in range(T):
            fill[t] = tstart[t]
        for i in range(base, base + N):
            t = t_assign[i]
            order[fill[t]] = words[i]
            fill[t] += 1

        for t in range(T):
            s = base + t
            k_old = k_tab[s]
            lo = tstart[t]
            hi = tstart[t + 1]
            nt = hi - lo
            # detach the table from its topic
            for q in range(lo, hi):
                nkw[k_old, order[q]] -= 1
            nk[k_old] -= nt
            m[j, k_old] -= 1
            m_dot[k_old] -= 1
            k_tab[s] = -1
            if m_dot[k_old] == 0:
                last = Kbox[0] - 1
                _drop_topic(doc_off, ntab, k_tab, m, m_dot, nkw, nk, Kbox, k_old)
                if exact:
                    _after_topic_drop(k_old, last, pcol, h_rest, h_add)
            elif exact:
                _refresh_col(m, k_old, j, pcol, gamma, delta, h_rest, h_add)

            K = Kbox[0]
            ninf = _count_ninf(h_rest, K) if exact else 0
            for k in range(K + 1):
                # joint collapsed likelihood of the table's words
                ll = 0.0
                if k < K:
                    tot = nk[k] + veta
                    for q in range(lo, hi):
                        ww = order[q]
                        ll += math.log((nkw[k, ww] + wcount[ww] + eta) / tot)
                        wcount[ww] += 1
                        tot += 1.0
                else:
                    tot = veta
                    for q in range(lo, hi):
                        ww = order[q]
                        ll += math.log((wcount[ww] + eta) / tot)
                        wcount[ww] += 1
                        tot += 1.0
                for q in range(lo, hi):
                    wcount[order[q]] = 0
                if k == K:
                    pr = log_gamma if (not exact or ninf == 0) else NEG_INF
                elif mode == MODE_HDP:
                    pr = _safe_log(m_dot[k])
                elif mode == MODE_DYNAMIC_LOCAL:
                    pr = _safe_log(_local_prior(m, m_dot, k, j, delta))
                else:
                    pr = _exact_delta(k, K, h_rest, h_add, ninf)
                logw[k] = pr + ll
            k_new = sample_log(logw, K + 1, uniforms[upos])
            upos += 1
            if k_new == K:
                Kbox[0] = K + 1
                if exact:
                    pcol[k_new] = 0
            k_tab[s] = k_new
            m[j, k_new] += 1
            m_dot[k_new] += 1
            for q in range(lo, hi):
                nkw[k_new, order[q]] += 1
            nk[k_new] += nt
            if exact:
                _refresh_col(m, k_new, j, pcol, gamma, delta, h_rest, h_add)
        prow += ntab[j]
    return j_stop, upos


# ---------------------------------------------------------------------------
# joint log probability (for chain selection and diagnostics)


@njit(cache=True, nogil=True)
def log_joint(doc_off, words, t_assign, ntab, n_tab, k_tab, m, m_dot, nkw, nk, Kbox,
              alpha, gamma, delta, eta, mode):
    """log p(words, tables, topics) under the collapsed model."""
    J = ntab.shape[0]
    V = nkw.shape[1]
    K = Kbox[0]
    total = 0.0
    # seating
    for j in range(J):
        N = doc_off[j + 1] - doc_off[j]
        T = ntab[j]
        total += T * math.log(alpha) + math.lgamma(alpha) - math.lgamma(alpha + N)
        for t in range(T):
            total += math.lgamma(n_tab[doc_off[j] + t])
    # topics
    if mode == MODE_HDP:
        mdd = 0
        for k in range(K):
            mdd += m_dot[k]
            total += math.lgamma(m_dot[k])
        total += K * math.log(gamma) + math.lgamma(gamma) - math.lgamma(gamma + mdd)
    else:
        total += log_prior_exact(m, ntab, K, gamma, delta)
    # words
    for k in range(K):
        total += math.lgamma(V * eta) - math.lgamma(V * eta + nk[k])
        for w in range(V):
            if nkw[k, w] > 0:
                total += math.lgamma(nkw[k, w] + eta) - math.lgamma(eta)
    return total


# ---------------------------------------------------------------------------
# online sweep over a single document with frozen topics


@njit(cache=True, nogil=True)
def online_sweeps(words, t_assign, n_tab, k_tab, mloc, Kbox, ntab_box,
                  log_phi, prior, alpha, gamma, n_sweeps, uniforms, upos,
                  burn_in, lag, phi, out_ll, init):
    """Gibbs sweeps over one document; topics are frozen rows of ``log_phi``.

    ``prior[k]`` is the pseudo-count of snapshot topic k; topics created in
    this document live at indices ``>= len(prior)`` with word probability
    ``1/V``.  ``Kbox[0]`` counts those local topics.  After burn-in every
    ``lag``-th sweep records the sequential predictive log-likelihood of the
    document into ``out_ll``.  Returns ``(next_uniform, samples_written)``.
    """
    N = words.shape[0]
    Ks = prior.shape[0]
    V = log_phi.shape[1]
    log_alpha = math.log(alpha)
    log_gamma = math.log(gamma)
    log_v = math.log(V)
    logw = np.empty(N + Ks + N + 1)
    order = np.empty(N, dtype=np.int64)
    tstart = np.empty(N + 1, dtype=np.int64)
    fill = np.empty(N, dtype=np.int64)
    prior_tot = 0.0
    for k in range(Ks):
        prior_tot += prior[k]
    written = 0
    start = 0 if init else 1
    for sweep in range(start, n_sweeps + 1):
        # sweep 0 is the sequential initialization
        for i in range(N):
            w = words[i]
            if t_assign[i] >= 0:
                t = t_assign[i]
                t_assign[i] = -1
                n_tab[t] -= 1
                if n_tab[t] == 0:
                    k = k_tab[t]
                    mloc[k] -= 1
                    last = ntab_box[0] - 1
                    if t != last:
                        n_tab[t] = n_tab[last]
                        k_tab[t] = k_tab[last]
                        for q in range(N):
                            if t_assign[q] == last:
                                t_assign[q] = t
                    n_tab[last] = 0
                    k_tab[last] = -1
                    ntab_box[0] = last
                    if k >= Ks and mloc[k] == 0:
                        _drop_local_topic(k, Ks, Kbox, mloc, k_tab, ntab_box[0])
            T = ntab_box[0]
            KL = Kbox[0]
            mrow = 0.0
            for k in range(Ks + KL):
                mrow += mloc[k]
            lz = math.log(prior_tot + mrow + gamma)
            for t in range(T):
                kt = k_tab[t]
                ll = log_phi[kt, w] if kt < Ks else -log_v
                logw[t] = math.log(n_tab[t]) + ll
            for k in range(Ks):
                logw[T + k] = log_alpha + _safe_log(prior[k] + mloc[k]) - lz + log_phi[k, w]
            for k in range(Ks, Ks + KL):
                logw[T + k] = log_alpha + _safe_log(mloc[k]) - lz - log_v
            logw[T + Ks + KL] = log_alpha + log_gamma - lz - log_v
            a = sample_log(logw, T + Ks + KL + 1, uniforms[upos])
            upos += 1
            if a < T:
                t = a
            else:
                k = a - T
                if k == Ks + KL:
                    Kbox[0] = KL + 1
                t = T
                k_tab[t] = k
                mloc[k] += 1
                ntab_box[0] = T + 1
            t_assign[i] = t
            n_tab[t] += 1

        if sweep > 0:
            # topic of every table
            T = ntab_box[0]
            for t in range(T + 1):
                tstart[t] = 0
            for i in range(N):
                tstart[t_assign[i] + 1] += 1
            for t in range(T):
                tstart[t + 1] += tstart[t]
            for t in range(T):
                fill[t] = tstart[t]
            for i in range(N):
                t = t_assign[i]
                order[fill[t]] = words[i]
                fill[t] += 1
            for t in range(T):
                k_old = k_tab[t]
                mloc[k_old] -= 1
                k_tab[t] = -1
                if k_old >= Ks and mloc[k_old] == 0:
                    _drop_local_topic(k_old, Ks, Kbox, mloc, k_tab, T)
                KL = Kbox[0]
                lo = tstart[t]
                hi = tstart[t + 1]
                nt = hi - lo
                for k in range(Ks):
                    ll = 0.0
                    for q in range(lo, hi):
                        ll += log_phi[k, order[q]]
                    logw[k] = _safe_log(prior[k] + mloc[k]) + ll
                for k in range(Ks, Ks + KL):
                    logw[k] = _safe_log(mloc[k]) - nt * log_v
                logw[Ks + KL] = log_gamma - nt * log_v
                k_new = sample_log(logw, Ks + KL + 1, uniforms[upos])
                upos += 1
                if k_new == Ks + KL:
                    Kbox[0] = KL + 1
                k_tab[t] = k_new
                mloc[k_new] += 1

            if sweep > burn_in and (sweep - burn_in) % lag == 0 and written < out_ll.shape[0]:
                out_ll[written] = sequential_loglik(words, t_assign, k_tab, ntab_box[0], phi,
                                                    prior, 1.0, alpha, gamma, Ks)
                written += 1
    return upos, written


@njit(cache=True)
def _drop_local_topic(k, Ks, Kbox, mloc, k_tab, T):
    last = Ks + Kbox[0] - 1
    if k != last:
        mloc[k] = mloc[last]
        for t in range(T):
            if k_tab[t] == last:
                k_tab[t] = k
    mloc[last] = 0
    Kbox[0] -= 1


@njit(cache=True)
def sequential_loglik(words, t_assign, k_tab, T, phi, prior, own_weight, alpha, gamma, Ks,
                      phi_new=None):
    """Sum over tokens of log p(word | tables and topics of the earlier tokens).

    A token joins an earlier table in proportion to its size or opens a new
    table with weight ``alpha``; a new table picks topic k with weight
    ``prior[k] + own_weight * (tables of k opened so far in this document)``
    or a new topic with weight ``gamma``.  Topics at indices ``>= Ks`` were
    created inside the document and emit words uniformly, as do new topics
    unless ``phi_new`` is given.
    """
    N = words.shape[0]
    V = phi.shape[1]
    cnt = np.zeros(T, dtype=np.int64)
    mpart = np.zeros(Ks + T, dtype=np.int64)
    ktot = Ks
    for t in range(T):
        if k_tab[t] + 1 > ktot:
            ktot = k_tab[t] + 1
    prior_tot = 0.0
    for k in range(Ks):
        prior_tot += prior[k]
    opened = 0
    total = 0.0
    for i in range(N):
        x = words[i]
        acc = 0.0
        for t in range(T):
            if cnt[t] > 0:
                kt = k_tab[t]
                px = phi[kt, x] if kt < Ks else 1.0 / V
                acc += cnt[t] * px
        mix = 0.0
        for k in range(ktot):
            wk = own_weight * mpart[k]
            if k < Ks:
                wk += prior[k]
                mix += wk * phi[k, x]
            else:
                mix += wk / V
        pnew = phi_new[x] if phi_new is not None else 1.0 / V
        mix += gamma * pnew
        mix /= prior_tot + own_weight * opened + gamma
        p = (acc + alpha * mix) / (i + alpha)
        total += math.log(p)
        t = t_assign[i]
        if cnt[t] == 0:
            mpart[k_tab[t]] += 1
            opened += 1
        cnt[t] += 1
    return total
