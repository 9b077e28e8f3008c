"""Compiled inner loops for the message-passing engine.

Array conventions shared by every kernel:

* ``word_ptr``, ``doc_index``, ``counts``: the vocabulary-major batch.
  Entries of local word ``w`` are ``word_ptr[w]:word_ptr[w + 1]``.
* ``mu``: ``(nnz, K)`` messages, one row per nonzero.
* ``theta``: ``(D_s, K)`` document statistics.
* ``phi``: ``(n_words, K)`` topic-word statistics of the batch words,
  prior plus live batch contribution.
* ``nk``: ``(K,)`` topic totals over the whole vocabulary.
* ``r_wk`` / ``r_w``: per-word-per-topic and per-word residuals.

All kernels are deterministic: loop order is fixed and ties go to the
lower index.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _ranks_ahead(vals, a, b):
    return vals[a] > vals[b] or (vals[a] == vals[b] and a < b)


@njit(cache=True)
def select_top(vals, n, out):
    """Write the indices of the ``n`` largest ``vals`` into ``out[:n]``.

    Bounded min-heap, O(K log n). The selected indices are returned in
    ascending order so that downstream loops visit topics in index order.
    """
    K = vals.shape[0]
    if n >= K:
        for k in range(K):
            out[k] = k
        return K
    size = 0
    for k in range(K):
        if size < n:
            out[size] = k
            c = size
            size += 1
            while c > 0:
                p = (c - 1) // 2
                if _ranks_ahead(vals, out[p], out[c]):
                    tmp = out[p]
                    out[p] = out[c]
                    out[c] = tmp
                    c = p
                else:
                    break
        elif _ranks_ahead(vals, k, out[0]):
            out[0] = k
            c = 0
            while True:
                left = 2 * c + 1
                right = left + 1
                worst = c
                if left < n and _ranks_ahead(vals, out[worst], out[left]):
                    worst = left
                if right < n and _ranks_ahead(vals, out[worst], out[right]):
                    worst = right
                if worst == c:
                    break
                tmp = out[c]
                out[c] = out[worst]
                out[worst] = tmp
                c = worst
    out[:n].sort()
    return n


@njit(cache=True)
def message(mu_i, x, theta_d, phi_w, nk, topics, n_sub, alpha, beta, wbeta, out):
    """Unnormalized collapsed-LDA message over ``topics[:n_sub]``.

    The current message's own contribution ``x * mu_i`` is excluded from
    every statistic, clamped at zero against rounding.
    """
    total = 0.0
    for j in range(n_sub):
        k = topics[j]
        xm = x * mu_i[k]
        a = theta_d[k] - xm
        if a < 0.0:
            a = 0.0
        b = phi_w[k] - xm
        if b < 0.0:
            b = 0.0
        c = nk[k] - xm
        if c < 0.0:
            c = 0.0
        p = (a + alpha) * (b + beta) / (c + wbeta)
        out[j] = p
        total += p
    return total


@njit(cache=True)
def renormalize(mu_i, topics, n_sub, full, buf, total, out):
    """Scale ``buf[:n_sub]`` so the subset keeps the mass it had in ``mu_i``.

    With ``full`` the subset is every topic and the target mass is exactly 1.
    """
    if total <= 0.0:
        raise FloatingPointError("zero message normalizer")
    mass = 1.0
    if not full:
        mass = 0.0
        for j in range(n_sub):
            mass += mu_i[topics[j]]
    for j in range(n_sub):
        out[j] = buf[j] / total * mass


@njit(cache=True)
def sweep_async(order, n_visit, budget, word_ptr, doc_index, counts, mu, theta, phi, nk,
                r_wk, r_w, alpha, beta, wbeta):
    """One asynchronous sweep (residual / active schedules).

    Visits ``order[:n_visit]``; each word updates its messages restricted to
    its ``budget`` top-residual topics and applies every change immediately.
    Residuals of the updated topics are recomputed, the rest are kept;
    with a strict subset ``r_w`` is updated incrementally in O(budget).
    Returns the number of message updates performed.
    """
    K = mu.shape[1]
    topics = np.empty(K, dtype=np.int64)
    buf = np.empty(K)
    new = np.empty(K)
    full = budget >= K
    if full:
        for k in range(K):
            topics[k] = k
    updates = 0
    for q in range(n_visit):
        w = order[q]
        if full:
            n_sub = K
        else:
            n_sub = select_top(r_wk[w], budget, topics)
        dropped = 0.0
        for j in range(n_sub):
            dropped += r_wk[w, topics[j]]
            r_wk[w, topics[j]] = 0.0
        for i in range(word_ptr[w], word_ptr[w + 1]):
            x = counts[i]
            d = doc_index[i]
            total = message(mu[i], x, theta[d], phi[w], nk, topics, n_sub, alpha, beta, wbeta, buf)
            renormalize(mu[i], topics, n_sub, full, buf, total, new)
            for j in range(n_sub):
                k = topics[j]
                delta = x * (new[j] - mu[i, k])
                theta[d, k] += delta
                phi[w, k] += delta
                nk[k] += delta
                r_wk[w, k] += abs(delta)
                mu[i, k] = new[j]
            updates += 1
        if full:
            s = 0.0
            for k in range(K):
                s += r_wk[w, k]
            r_w[w] = s
        else:
            # O(budget) update; topics outside the subset keep their residuals.
            s = r_w[w] - dropped
            for j in range(n_sub):
                s += r_wk[w, topics[j]]
            r_w[w] = max(s, 0.0)
    return updates


@njit(cache=True)
def sync_messages(word_ptr, doc_index, counts, mu, theta, phi, nk, alpha, beta, wbeta, mu_new):
    """All new messages from frozen statistics (synchronous schedule)."""
    K = mu.shape[1]
    topics = np.arange(K)
    buf = np.empty(K)
    new = np.empty(K)
    for w in range(word_ptr.shape[0] - 1):
        for i in range(word_ptr[w], word_ptr[w + 1]):
            d = doc_index[i]
            total = message(mu[i], counts[i], theta[d], phi[w], nk, topics, K, alpha, beta, wbeta, buf)
            renormalize(mu[i], topics, K, True, buf, total, new)
            for k in range(K):
                mu_new[i, k] = new[k]


@njit(cache=True)
def em_messages(word_ptr, doc_index, theta, phi, mu_new):
    """E-step: ``mu(k) ~ theta_d(k) * phi_w(k)``, no self-exclusion."""
    K = mu_new.shape[1]
    for w in range(word_ptr.shape[0] - 1):
        for i in range(word_ptr[w], word_ptr[w + 1]):
            d = doc_index[i]
            total = 0.0
            for k in range(K):
                p = theta[d, k] * phi[w, k]
                mu_new[i, k] = p
                total += p
            if total <= 0.0:
                raise FloatingPointError("zero E-step normalizer")
            for k in range(K):
                mu_new[i, k] = mu_new[i, k] / total


@njit(cache=True)
def residuals(word_ptr, counts, mu_old, mu_new, r_wk, r_w):
    K = mu_old.shape[1]
    for w in range(word_ptr.shape[0] - 1):
        for k in range(K):
            r_wk[w, k] = 0.0
        for i in range(word_ptr[w], word_ptr[w + 1]):
            x = counts[i]
            for k in range(K):
                r_wk[w, k] += x * abs(mu_new[i, k] - mu_old[i, k])
        s = 0.0
        for k in range(K):
            s += r_wk[w, k]
        r_w[w] = s


@njit(cache=True)
def accumulate(word_ptr, doc_index, counts, mu, theta, phi):
    """Add ``x * mu`` of every nonzero into ``theta`` and ``phi``."""
    K = mu.shape[1]
    for w in range(word_ptr.shape[0] - 1):
        for i in range(word_ptr[w], word_ptr[w + 1]):
            x = counts[i]
            d = doc_index[i]
            for k in range(K):
                xm = x * mu[i, k]
                theta[d, k] += xm
                phi[w, k] += xm


@njit(cache=True)
def fold_in(doc_ptr, entry_row, counts, phi_rows, alpha, max_iters, threshold, theta):
    """Estimate document statistics against frozen normalized topics.

    Documents are independent; each runs synchronous sweeps of
    ``mu(k) ~ (theta_d(k) - x mu(k) + alpha) * phi_w(k)`` until its mean
    residual per message drops below ``threshold`` or ``max_iters`` is hit.
    ``theta`` receives the final statistics; returns per-document sweep counts.
    """
    K = phi_rows.shape[1]
    n_docs = doc_ptr.shape[0] - 1
    sweeps = np.zeros(n_docs, dtype=np.int64)
    for d in range(n_docs):
        lo = doc_ptr[d]
        hi = doc_ptr[d + 1]
        n = hi - lo
        if n == 0:
            continue
        mu = np.empty((n, K))
        new = np.empty((n, K))
        th = np.zeros(K)
        for i in range(n):
            row = entry_row[lo + i]
            s = 0.0
            for k in range(K):
                mu[i, k] = phi_rows[row, k]
                s += mu[i, k]
            for k in range(K):
                mu[i, k] /= s
                th[k] += counts[lo + i] * mu[i, k]
        for t in range(max_iters):
            res = 0.0
            for i in range(n):
                x = counts[lo + i]
                row = entry_row[lo + i]
                total = 0.0
                for k in range(K):
                    a = th[k] - x * mu[i, k]
                    if a < 0.0:
                        a = 0.0
                    p = (a + alpha) * phi_rows[row, k]
                    new[i, k] = p
                    total += p
                for k in range(K):
                    new[i, k] /= total
                    res += x * abs(new[i, k] - mu[i, k])
            for k in range(K):
                th[k] = 0.0
            for i in range(n):
                x = counts[lo + i]
                for k in range(K):
                    mu[i, k] = new[i, k]
                    th[k] += x * mu[i, k]
            sweeps[d] = t + 1
            if res / n < threshold:
                break
        for k in range(K):
            theta[d, k] = th[k]
    return sweeps
