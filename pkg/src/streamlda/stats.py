"""Topic-word sufficient statistics that persist across mini-batches."""
from __future__ import annotations

import threading

import numpy as np


class GlobalStats:
    """In-memory ``(W, K)`` topic-word statistics plus topic totals.

    Subclasses swap the column storage (see
    :class:`streamlda.modelstore.StoreStats`) but share the accumulation
    arithmetic, so both back-ends produce bit-identical results.
    """

    def __init__(self, n_topics: int, vocab_size: int = 0):
        self.n_topics = n_topics
        self._cols = np.zeros((max(vocab_size, 16), n_topics))
        self._size = vocab_size
        self.totals = np.zeros(n_topics)
        self.lock = threading.RLock()

    @property
    def vocab_size(self) -> int:
        return self._size

    def extend(self, vocab_size: int) -> None:
        if vocab_size <= self._size:
            return
        if vocab_size > self._cols.shape[0]:
            grown = np.zeros((max(vocab_size, 2 * self._cols.shape[0]), self.n_topics))
            grown[: self._size] = self._cols[: self._size]
            self._cols = grown
        self._size = vocab_size

    def get(self, word_ids) -> np.ndarray:
        """Copies of the statistic columns of ``word_ids`` (sorted ids)."""
        return self._cols[np.asarray(word_ids, dtype=np.int64)].copy()

    def put(self, word_ids, columns) -> None:
        self._cols[np.asarray(word_ids, dtype=np.int64)] = columns

    def accumulate(self, word_ids, prior, delta) -> None:
        """Store ``prior + delta`` for ``word_ids`` and add ``delta`` to the totals."""
        with self.lock:
            self.put(word_ids, prior + delta)
            self.totals += delta.sum(axis=0)

    def flush(self) -> None:
        pass

    def to_array(self) -> np.ndarray:
        with self.lock:
            return self._cols[: self._size].copy()
