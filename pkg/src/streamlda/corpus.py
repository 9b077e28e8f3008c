"""Bag-of-words ingestion and mini-batch streaming.

Corpora travel in two shapes. On the way in they are document-major
``(doc_id, word_id, count)`` triples, which is what the UCI ``docword``
files and the text tokenizer produce. Each mini-batch is then re-keyed
vocabulary-major (:class:`SparseBatch`) so the topic-word statistics of
a word are touched once per sweep.

In-memory corpora (for train/test splitting and evaluation) are
``scipy.sparse.csr_matrix`` objects of shape ``(D, W)`` with integer counts.
"""
from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

Token = Union[int, str]


class CorpusFormatError(ValueError):
    """Malformed bag-of-words input."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class CorpusHeader:
    doc_count: int
    vocab_size: int
    nnz: int

    def __post_init__(self):
        if self.doc_count < 1 or self.vocab_size < 1 or self.nnz < 0:
            raise CorpusFormatError(f"invalid header {self}")
        if self.nnz > self.doc_count * self.vocab_size:
            raise CorpusFormatError(f"nnz={self.nnz} exceeds D*W")


class VocabularyMap:
    """Append-only token <-> index map.

    Indices are handed out in order of first appearance and never
    change afterwards, so the map can grow for as long as the stream runs.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: list[str] = []
        self._index: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "VocabularyMap":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __getitem__(self, token: str) -> int:
        return self._index[token]

    def get(self, token: str, default=None):
        """Index of ``token`` without adding it."""
        return self._index.get(token, default)

    @property
    def size(self) -> int:
        return len(self._tokens)

    def add(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._tokens.append(token)
            self._index[token] = idx
        return idx

    def grow_to(self, size: int) -> None:
        """Reserve anonymous entries so that indices ``< size`` are valid."""
        while len(self._tokens) < size:
            self.add(f"<w{len(self._tokens)}>")

    def token(self, idx: int) -> str:
        if 0 <= idx < len(self._tokens):
            return self._tokens[idx]
        return f"<w{idx}>"

    def tokens(self) -> list[str]:
        return list(self._tokens)


@dataclass(frozen=True, eq=False)
class SparseBatch:
    """One mini-batch in vocabulary-major (compressed column) layout.

    Entries of the word ``word_ids[j]`` live in the half-open range
    ``word_ptr[j]:word_ptr[j + 1]`` of ``doc_index`` / ``counts``.
    ``doc_ids`` maps local document numbers back to stream document ids.
    """

    index: int
    word_ids: np.ndarray
    word_ptr: np.ndarray
    doc_index: np.ndarray
    counts: np.ndarray
    doc_ids: np.ndarray
    vocab_size: int

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def n_words(self) -> int:
        return len(self.word_ids)

    @property
    def nnz(self) -> int:
        return len(self.counts)

    @property
    def token_count(self) -> float:
        return float(self.counts.sum())

    def doc_lengths(self) -> np.ndarray:
        return np.bincount(self.doc_index, weights=self.counts, minlength=self.doc_count)

    def entries(self, j: int) -> list[tuple[int, int]]:
        """``(local_doc, count)`` pairs of the ``j``-th word of the batch."""
        lo, hi = self.word_ptr[j], self.word_ptr[j + 1]
        return [(int(d), int(c)) for d, c in zip(self.doc_index[lo:hi], self.counts[lo:hi])]

    def entry_word_ids(self) -> np.ndarray:
        """Global word id of every nonzero, aligned with ``counts``."""
        return np.repeat(self.word_ids, np.diff(self.word_ptr))

    def to_triples(self) -> list[tuple[int, int, int]]:
        words = self.entry_word_ids()
        docs = self.doc_ids[self.doc_index]
        return [(int(d), int(w), int(c)) for d, w, c in zip(docs, words, self.counts)]

    def to_csr(self, n_cols: int | None = None) -> sp.csr_matrix:
        """Dense-id ``(doc_count, W)`` matrix of this batch."""
        n_cols = self.vocab_size if n_cols is None else n_cols
        return sp.csr_matrix(
            (self.counts, (self.doc_index, self.entry_word_ids())),
            shape=(self.doc_count, n_cols),
        )

    @classmethod
    def from_csr(cls, x: sp.spmatrix, index: int = 1, doc_ids: Sequence[int] | None = None,
                 vocab_size: int | None = None) -> "SparseBatch":
        x = sp.csc_matrix(x, dtype=np.float64)
        x.sum_duplicates()
        x.eliminate_zeros()
        x.sort_indices()
        col_nnz = np.diff(x.indptr)
        word_ids = np.flatnonzero(col_nnz).astype(np.int64)
        word_ptr = np.concatenate(([0], np.cumsum(col_nnz[word_ids]))).astype(np.int64)
        if doc_ids is None:
            doc_ids = np.arange(x.shape[0])
        return cls(
            index=index,
            word_ids=word_ids,
            word_ptr=word_ptr,
            doc_index=x.indices.astype(np.int64),
            counts=x.data.astype(np.float64),
            doc_ids=np.asarray(doc_ids, dtype=np.int64),
            vocab_size=int(x.shape[1] if vocab_size is None else vocab_size),
        )


# -- parsing -------------------------------------------------------------


def _text_stream(source: Union[str, bytes, IO]) -> IO[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("ascii"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="ascii")


def parse_bag_of_words(source) -> tuple[CorpusHeader, Iterator[tuple[int, int, int]]]:
    """Parse a UCI ``docword`` stream.

    ``source`` may be the file contents (``str`` / ``bytes``) or an open
    file object. The header is read eagerly; the returned iterator yields
    0-based ``(doc, word, count)`` triples and raises
    :class:`CorpusFormatError` (a ``ValueError``) on the first bad line.
    """
    fh = _text_stream(source)
    lineno = 0
    header = []
    while len(header) < 3:
        line = fh.readline()
        lineno += 1
        if not line:
            raise CorpusFormatError("truncated header", lineno)
        if not line.strip():
            continue
        try:
            header.append(int(line))
        except ValueError:
            raise CorpusFormatError(f"expected integer header field, got {line.strip()!r}", lineno)
    head = CorpusHeader(*header)

    def triples():
        n = 0
        no = lineno
        for line in fh:
            no += 1
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise CorpusFormatError(f"expected 'docID wordID count', got {line.strip()!r}", no)
            try:
                d, w, c = (int(p) for p in parts)
            except ValueError:
                raise CorpusFormatError(f"non-integer field in {line.strip()!r}", no)
            if not 1 <= d <= head.doc_count:
                raise CorpusFormatError(f"docID {d} out of range [1, {head.doc_count}]", no)
            if not 1 <= w <= head.vocab_size:
                raise CorpusFormatError(f"wordID {w} out of range [1, {head.vocab_size}]", no)
            if c <= 0:
                raise CorpusFormatError(f"count must be positive, got {c}", no)
            n += 1
            if n > head.nnz:
                raise CorpusFormatError(f"more than the declared {head.nnz} entries", no)
            yield d - 1, w - 1, c
        if n != head.nnz:
            raise CorpusFormatError(f"declared {head.nnz} entries, found {n}", no)

    return head, triples()


def read_docword(path: str | os.PathLike) -> tuple[CorpusHeader, sp.csr_matrix]:
    """Load a whole ``docword`` file as a ``(D, W)`` CSR count matrix."""
    with open(path, "rb") as fh:
        head, it = parse_bag_of_words(fh)
        trip = np.fromiter((v for t in it for v in t), dtype=np.int64).reshape(-1, 3)
    x = sp.csr_matrix(
        (trip[:, 2], (trip[:, 0], trip[:, 1])),
        shape=(head.doc_count, head.vocab_size),
        dtype=np.int64,
    )
    return head, x


def write_docword(x: sp.spmatrix, fh: IO[str]) -> None:
    x = sp.coo_matrix(x)
    order = np.lexsort((x.col, x.row))
    fh.write(f"{x.shape[0]}\n{x.shape[1]}\n{x.nnz}\n")
    for r, c, v in zip(x.row[order], x.col[order], x.data[order]):
        fh.write(f"{r + 1} {c + 1} {int(v)}\n")


def iter_text_documents(lines: Iterable[str], vocab: VocabularyMap) -> Iterator[tuple[int, int, int]]:
    """Tokenize one-document-per-line text into document-major triples.

    Tokens are whitespace separated and lowercased; each unseen token is
    appended to ``vocab``. Blank lines are dropped with a warning and do
    not consume a document id.
    """
    doc = 0
    for lineno, line in enumerate(lines, 1):
        tokens = line.lower().split()
        if not tokens:
            logger.warning("dropping empty document at line %d", lineno)
            continue
        counts: dict[int, int] = {}
        for tok in tokens:
            w = vocab.add(tok)
            counts[w] = counts.get(w, 0) + 1
        for w in sorted(counts):
            yield doc, w, counts[w]
        doc += 1


def csr_triples(x: sp.spmatrix) -> Iterator[tuple[int, int, int]]:
    """Document-major triples of an in-memory corpus."""
    x = sp.csr_matrix(x)
    x.sort_indices()
    for d in range(x.shape[0]):
        lo, hi = x.indptr[d], x.indptr[d + 1]
        for w, c in zip(x.indices[lo:hi], x.data[lo:hi]):
            yield d, int(w), int(c)


# -- batching ------------------------------------------------------------


def _build_batch(index, docs, vocab_size):
    doc_ids = np.array([d for d, _ in docs], dtype=np.int64)
    rows = np.concatenate([np.full(len(e), i, dtype=np.int64) for i, (_, e) in enumerate(docs)])
    entries = np.concatenate([np.asarray(e, dtype=np.int64).reshape(-1, 2) for _, e in docs])
    x = sp.coo_matrix((entries[:, 1], (rows, entries[:, 0])), shape=(len(docs), vocab_size))
    return SparseBatch.from_csr(x, index=index, doc_ids=doc_ids, vocab_size=vocab_size)


def stream_batches(
    triples: Iterable[tuple[int, Token, int]],
    batch_size: int,
    vocab: VocabularyMap | None = None,
) -> Iterator[SparseBatch]:
    """Group document-major triples into vocabulary-major mini-batches.

    Every ``batch_size`` consecutive documents form one batch; the last
    batch may be shorter. Word entries may be integer ids or string tokens;
    strings are resolved through ``vocab`` (extending it), and integer ids
    beyond the current vocabulary grow it with anonymous entries.

    Each emitted batch records the vocabulary size at emission, which is the
    ``W`` the inference engine must use for it.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    vocab = VocabularyMap() if vocab is None else vocab
    base_size = len(vocab)
    docs: list[tuple[int, list[tuple[int, int]]]] = []
    cur_doc = None
    cur: list[tuple[int, int]] = []
    index = 0
    seen_docs: set[int] = set()
    # ids are handed out in stream order, so the vocabulary size at the end
    # of a batch is one past the largest id seen so far
    max_id = -1

    def close_doc():
        nonlocal cur
        if cur_doc is not None and cur:
            docs.append((cur_doc, cur))
        cur = []

    def emit():
        return _build_batch(index, docs, max(base_size, max_id + 1))

    for d, w, c in triples:
        if d != cur_doc:
            close_doc()
            if d in seen_docs:
                raise CorpusFormatError(f"document {d} is not contiguous; input must be document-major")
            seen_docs.add(d)
            if len(docs) == batch_size:
                index += 1
                yield emit()
                docs = []
            cur_doc = d
        if isinstance(w, str):
            w = vocab.add(w)
        elif w >= len(vocab):
            vocab.grow_to(w + 1)
        max_id = max(max_id, int(w))
        cur.append((int(w), int(c)))
    close_doc()
    if docs:
        index += 1
        yield emit()


def batches_from_csr(x: sp.spmatrix, batch_size: int, vocab: VocabularyMap | None = None) -> Iterator[SparseBatch]:
    """Stream an in-memory corpus; empty rows are dropped."""
    x = sp.csr_matrix(x)
    if vocab is None:
        vocab = VocabularyMap()
        vocab.grow_to(x.shape[1])
    empty = np.flatnonzero(np.diff(x.indptr) == 0)
    if len(empty):
        logger.warning("dropping %d empty documents", len(empty))
    return stream_batches(csr_triples(x), batch_size, vocab)


def holdout_rows(n_docs: int, test_count: int, rng: np.random.Generator | int) -> np.ndarray:
    """Sorted indices of ``test_count`` documents drawn without replacement."""
    if not 0 <= test_count < n_docs:
        raise ValueError(f"test_count must be in [0, {n_docs}), got {test_count}")
    rng = np.random.default_rng(rng)
    return np.sort(rng.choice(n_docs, size=test_count, replace=False))


def split_train_test(
    corpus: sp.spmatrix, test_count: int, rng: np.random.Generator | int
) -> tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
    """Hold out ``test_count`` whole documents at random.

    Returns ``(train, test, test_rows)``; train keeps the original document
    order so it can be streamed as-is.
    """
    corpus = sp.csr_matrix(corpus)
    n_docs = corpus.shape[0]
    test_rows = holdout_rows(n_docs, test_count, rng)
    mask = np.ones(n_docs, dtype=bool)
    mask[test_rows] = False
    return corpus[mask], corpus[test_rows], test_rows
