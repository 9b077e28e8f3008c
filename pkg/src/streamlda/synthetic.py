"""Corpora sampled from a known LDA model, for tests and demos."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def random_topics(n_topics: int, n_words: int, concentration: float, rng) -> np.ndarray:
    """``(n_topics, n_words)`` word distributions drawn from a symmetric Dirichlet."""
    rng = np.random.default_rng(rng)
    return rng.dirichlet(np.full(n_words, concentration), size=n_topics)


def sample_documents(topics: np.ndarray, n_docs: int, doc_length: int | tuple[int, int],
                     alpha: float, rng) -> sp.csr_matrix:
    """Bag-of-words counts ``(n_docs, W)`` from the LDA generative process.

    ``doc_length`` is either fixed or an inclusive ``(low, high)`` range.
    """
    rng = np.random.default_rng(rng)
    K, W = topics.shape
    theta = rng.dirichlet(np.full(K, alpha), size=n_docs)
    if isinstance(doc_length, tuple):
        lengths = rng.integers(doc_length[0], doc_length[1] + 1, size=n_docs)
    else:
        lengths = np.full(n_docs, doc_length)
    word_dist = theta @ topics  # (n_docs, W)
    rows = []
    for d in range(n_docs):
        rows.append(rng.multinomial(lengths[d], word_dist[d] / word_dist[d].sum()))
    return sp.csr_matrix(np.vstack(rows), dtype=np.int64)


def lda_corpus(n_docs: int, n_words: int, n_topics: int, doc_length=(40, 80), alpha: float = 0.1,
               beta: float = 0.05, seed=0):
    """Sample topics and documents; returns ``(counts, topics)``."""
    rng = np.random.default_rng(seed)
    topics = random_topics(n_topics, n_words, beta, rng)
    return sample_documents(topics, n_docs, doc_length, alpha, rng), topics


def block_topics(n_topics: int, n_words: int, concentration: float = 0.5, leak: float = 0.05,
                 rng=None) -> np.ndarray:
    """Well-separated topics: topic ``k`` puts ``1 - leak`` of its mass on its own
    contiguous block of words (Dirichlet-distributed inside the block) and
    spreads ``leak`` uniformly over the whole vocabulary."""
    rng = np.random.default_rng(rng)
    edges = np.linspace(0, n_words, n_topics + 1).astype(int)
    topics = np.full((n_topics, n_words), leak / n_words)
    for k in range(n_topics):
        lo, hi = edges[k], edges[k + 1]
        topics[k, lo:hi] += (1 - leak) * rng.dirichlet(np.full(hi - lo, concentration))
    return topics / topics.sum(axis=1, keepdims=True)
