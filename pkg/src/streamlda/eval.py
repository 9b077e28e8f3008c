"""Perplexity and topic summaries."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .corpus import SparseBatch, VocabularyMap
from .inference import Hyperparams

FOLD_IN_ITERS = 30
FOLD_IN_THRESHOLD = 0.1


@dataclass(frozen=True)
class PerplexityRecord:
    docs_seen: int
    perplexity: float
    tokens_evaluated: int


def topic_word_distribution(phi_hat, hyper: Hyperparams, totals=None, vocab_size=None, rows=None):
    """Smoothed ``phi`` rows; ids at or beyond the stored vocabulary get the prior-only value.

    ``rows`` selects word ids (default: every stored word). The result has
    one row per requested id.
    """
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    stored = phi_hat.shape[0]
    totals = phi_hat.sum(axis=0) if totals is None else np.asarray(totals, dtype=np.float64)
    W = stored if vocab_size is None else vocab_size
    den = totals + W * hyper.beta
    rows = np.arange(stored) if rows is None else np.asarray(rows, dtype=np.int64)
    out = np.full((len(rows), phi_hat.shape[1]), hyper.beta) / den
    known = rows < stored
    out[known] = (phi_hat[rows[known]] + hyper.beta) / den
    return out


def _fold_in_csr(x: sp.csr_matrix, phi_rows: np.ndarray, row_of_word: np.ndarray, alpha,
                 iters, threshold):
    theta_hat = np.zeros((x.shape[0], phi_rows.shape[1]))
    _kernels.fold_in(x.indptr.astype(np.int64), row_of_word[x.indices].astype(np.int64),
                     x.data.astype(np.float64), phi_rows, float(alpha), int(iters), float(threshold),
                     theta_hat)
    return theta_hat


def fold_in(word_ids, counts, phi, hyper: Hyperparams, iters: int = FOLD_IN_ITERS,
            threshold: float = FOLD_IN_THRESHOLD) -> np.ndarray:
    """Topic proportions of one held-out document under frozen topics.

    ``phi`` is the normalized ``(W, K)`` topic-word matrix. Runs synchronous
    message updates in which only the document's own statistics move, then
    smooths them with ``alpha``.
    """
    word_ids = np.asarray(word_ids, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.float64)
    if len(word_ids) == 0 or counts.sum() <= 0:
        raise ValueError("cannot fold in an empty document")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    phi = np.asarray(phi, dtype=np.float64)
    x = sp.csr_matrix((counts, (np.zeros_like(word_ids), np.arange(len(word_ids)))),
                      shape=(1, len(word_ids)))
    theta_hat = _fold_in_csr(x, phi[word_ids], np.arange(len(word_ids)), hyper.alpha, iters, threshold)[0]
    K = phi.shape[1]
    return (theta_hat + hyper.alpha) / (theta_hat.sum() + K * hyper.alpha)


def _split_tokens(x: sp.csr_matrix, frac: float, rng: np.random.Generator):
    """Per-document random token split into (estimate, evaluate) count matrices."""
    est_rows, est_cols, ev_rows, ev_cols = [], [], [], []
    for d in range(x.shape[0]):
        lo, hi = x.indptr[d], x.indptr[d + 1]
        tokens = np.repeat(x.indices[lo:hi], x.data[lo:hi].astype(np.int64))
        tokens = rng.permutation(tokens)
        cut = int(np.floor(frac * len(tokens)))
        est_rows.append(np.full(cut, d))
        est_cols.append(tokens[:cut])
        ev_rows.append(np.full(len(tokens) - cut, d))
        ev_cols.append(tokens[cut:])

    def build(rows, cols):
        rows = np.concatenate(rows) if rows else np.empty(0, np.int64)
        cols = np.concatenate(cols) if cols else np.empty(0, np.int64)
        m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=x.shape)
        m.sum_duplicates()
        return m

    return build(est_rows, est_cols), build(ev_rows, ev_cols)


def predictive_perplexity(
    test: sp.spmatrix,
    phi_hat,
    hyper: Hyperparams,
    totals=None,
    vocab_size=None,
    docs_seen: int = 0,
    protocol: str = "full",
    split_frac: float = 0.8,
    seed=0,
    iters: int = FOLD_IN_ITERS,
    threshold: float = FOLD_IN_THRESHOLD,
) -> PerplexityRecord:
    """Held-out perplexity ``exp(-sum x log sum_k theta phi / sum x)``.

    ``phi_hat`` are topic-word statistics ``(W, K)``; test words beyond
    ``W`` get the prior-only distribution. With ``protocol="full"`` each
    document is folded in and scored on all its tokens; ``"split"`` folds in
    on a random ``split_frac`` of the tokens and scores the rest.
    """
    x = sp.csr_matrix(test, dtype=np.float64)
    x.sort_indices()
    if x.nnz == 0:
        raise ValueError("empty test corpus")
    if protocol == "full":
        est, ev = x, x
    elif protocol == "split":
        est, ev = _split_tokens(x, split_frac, np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    words = np.unique(x.indices)
    row_of_word = np.full(max(x.shape[1], int(words[-1]) + 1), -1, dtype=np.int64)
    row_of_word[words] = np.arange(len(words))
    phi_rows = topic_word_distribution(phi_hat, hyper, totals, vocab_size, rows=words)
    theta_hat = _fold_in_csr(est, phi_rows, row_of_word, hyper.alpha, iters, threshold)
    K = phi_rows.shape[1]
    theta = (theta_hat + hyper.alpha) / (theta_hat.sum(axis=1, keepdims=True) + K * hyper.alpha)
    ev = ev.tocoo()
    p = np.einsum("ik,ik->i", theta[ev.row], phi_rows[row_of_word[ev.col]])
    tokens = float(ev.data.sum())
    if tokens == 0:
        raise ValueError("no tokens left to evaluate")
    ll = float(np.dot(ev.data, np.log(p)))
    return PerplexityRecord(docs_seen, float(np.exp(-ll / tokens)), int(round(tokens)))


def training_perplexity(batch: SparseBatch, theta, phi_rows) -> float:
    """Perplexity of a batch under its own ``theta`` and ``phi`` rows of its words."""
    local_word = np.repeat(np.arange(batch.n_words), np.diff(batch.word_ptr))
    p = np.einsum("ik,ik->i", theta[batch.doc_index], phi_rows[local_word])
    return float(np.exp(-np.dot(batch.counts, np.log(p)) / batch.counts.sum()))


def top_words(phi_hat, vocab: VocabularyMap | None, topic: int, n: int = 10):
    """``n`` highest-weight ``(token, weight)`` pairs of one topic; lower id wins ties."""
    if n < 1:
        raise ValueError("n must be >= 1")
    col = np.asarray(phi_hat)[:, topic]
    ids = np.argsort(-col, kind="stable")[:n]
    name = vocab.token if vocab is not None else (lambda i: str(i))
    return [(name(int(i)), float(col[i])) for i in ids]


def write_perplexity_csv(records, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("docs_seen", "perplexity", "tokens"))
    for r in records:
        writer.writerow((r.docs_seen, repr(r.perplexity), r.tokens_evaluated))


def write_top_words_tsv(phi_hat, vocab, fh, n: int = 10) -> None:
    fh.write("topic\trank\ttoken\tweight\n")
    for k in range(np.asarray(phi_hat).shape[1]):
        for rank, (tok, weight) in enumerate(top_words(phi_hat, vocab, k, n), 1):
            fh.write(f"{k}\t{rank}\t{tok}\t{weight!r}\n")
