"""Disk-resident topic-word statistics with an LRU column buffer.

File layout (little-endian)::

    offset  size  field
    0       4     magic b"OBPS"
    4       4     version (u32) = 1
    8       4     K (u32)
    12      8     W (u64)
    20      4     byte-order mark (u32) 0x01020304
    24      ...   W columns of K float64, column w at 24 + w * K * 8

Column writes go through a redo journal (``<path>.journal``): records are
appended and fsynced there first, then written in place, then the journal
is removed. A crash leaves every column either wholly old or wholly new;
on open, complete journal records are replayed and a torn tail is dropped.
"""
from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from collections import OrderedDict

import numpy as np

from .stats import GlobalStats

logger = logging.getLogger(__name__)

MAGIC = b"OBPS"
VERSION = 1
BOM = 0x01020304
HEADER = struct.Struct("<4sIIQI")
HEADER_SIZE = HEADER.size  # 24
RECORD_HEAD = struct.Struct("<QI")  # word id, crc32 of the column bytes


class StoreFormatError(ValueError):
    pass


class ColumnStore:
    """Fixed-stride file of ``K``-vector columns.

    ``reads`` / ``writes`` count column transfers to and from the file.
    """

    def __init__(self, path, n_topics: int, fsync: bool = True):
        self.path = os.fspath(path)
        self.journal_path = self.path + ".journal"
        self.fsync_enabled = fsync
        self.reads = 0
        self.writes = 0
        exists = os.path.exists(self.path) and os.path.getsize(self.path) > 0
        self._fh = open(self.path, "r+b" if exists else "w+b")
        if exists:
            self.n_topics, self.vocab_size = self._read_header()
            if self.n_topics != n_topics:
                self._fh.close()
                raise StoreFormatError(f"{self.path}: store has K={self.n_topics}, requested K={n_topics}")
            self.column_bytes = 8 * self.n_topics
            self._replay_journal()
        else:
            self.n_topics, self.vocab_size = n_topics, 0
            self.column_bytes = 8 * self.n_topics
            self._write_header()
            self._sync()

    # header ---------------------------------------------------------------

    def _read_header(self):
        self._fh.seek(0)
        raw = self._fh.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE:
            raise StoreFormatError(f"{self.path}: truncated header")
        magic, version, K, W, bom = HEADER.unpack(raw)
        if magic != MAGIC:
            raise StoreFormatError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise StoreFormatError(f"{self.path}: unsupported version {version}")
        if bom != BOM:
            raise StoreFormatError(f"{self.path}: byte-order mark mismatch")
        return K, W

    def _write_header(self):
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.n_topics, self.vocab_size, BOM))

    def _sync(self):
        self._fh.flush()
        if self.fsync_enabled:
            os.fsync(self._fh.fileno())

    def _offset(self, w: int) -> int:
        return HEADER_SIZE + w * self.column_bytes

    # columns ----------------------------------------------------------------

    def extend(self, vocab_size: int) -> None:
        """Grow to ``vocab_size`` columns; new columns read as zeros."""
        if vocab_size < self.vocab_size:
            raise ValueError("the vocabulary can only grow")
        if vocab_size == self.vocab_size:
            return
        self._fh.truncate(self._offset(vocab_size))
        self.vocab_size = vocab_size
        self._write_header()

    def read_column(self, w: int) -> np.ndarray:
        if not 0 <= w < self.vocab_size:
            raise IndexError(f"column {w} outside [0, {self.vocab_size})")
        self._fh.seek(self._offset(w))
        raw = self._fh.read(self.column_bytes)
        self.reads += 1
        if len(raw) < self.column_bytes:  # sparse tail of a grown file
            raw = raw.ljust(self.column_bytes, b"\0")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def write_columns(self, word_ids, columns) -> None:
        """Persist columns atomically per column (journal, then in place)."""
        word_ids = [int(w) for w in word_ids]
        if not word_ids:
            return
        for w in word_ids:
            if not 0 <= w < self.vocab_size:
                raise IndexError(f"column {w} outside [0, {self.vocab_size})")
        payload = [np.ascontiguousarray(c, dtype="<f8").tobytes() for c in columns]
        with open(self.journal_path, "wb") as jf:
            for w, raw in zip(word_ids, payload):
                jf.write(RECORD_HEAD.pack(w, zlib.crc32(raw)))
                jf.write(raw)
            jf.flush()
            if self.fsync_enabled:
                os.fsync(jf.fileno())
        self._write_in_place(word_ids, payload)
        self._sync()
        os.remove(self.journal_path)

    def _write_in_place(self, word_ids, payload):
        for w, raw in zip(word_ids, payload):
            self._fh.seek(self._offset(w))
            self._fh.write(raw)
            self.writes += 1

    def _replay_journal(self):
        if not os.path.exists(self.journal_path):
            return
        column_bytes = self.column_bytes
        records = []
        with open(self.journal_path, "rb") as jf:
            while True:
                head = jf.read(RECORD_HEAD.size)
                if len(head) < RECORD_HEAD.size:
                    break
                w, crc = RECORD_HEAD.unpack(head)
                raw = jf.read(column_bytes)
                if len(raw) < column_bytes or zlib.crc32(raw) != crc or w >= self.vocab_size:
                    break
                records.append((w, raw))
        if records:
            logger.warning("%s: replaying %d journaled columns", self.path, len(records))
            self._write_in_place([w for w, _ in records], [r for _, r in records])
            self._sync()
        os.remove(self.journal_path)

    def iter_chunks(self, chunk_bytes: int = 1 << 22):
        """Yield ``(first_word, block)`` over all columns in file order (uncounted)."""
        chunk = max(1, chunk_bytes // self.column_bytes)
        for lo in range(0, self.vocab_size, chunk):
            hi = min(lo + chunk, self.vocab_size)
            size = (hi - lo) * self.column_bytes
            self._fh.seek(self._offset(lo))
            raw = self._fh.read(size).ljust(size, b"\0")
            yield lo, np.frombuffer(raw, dtype="<f8").reshape(hi - lo, self.n_topics).astype(np.float64)

    def read_all(self) -> np.ndarray:
        out = np.zeros((self.vocab_size, self.n_topics))
        for lo, block in self.iter_chunks():
            out[lo: lo + len(block)] = block
        return out

    def scan_totals(self) -> np.ndarray:
        """Column sum over every stored word."""
        totals = np.zeros(self.n_topics)
        for _, block in self.iter_chunks():
            totals += block.sum(axis=0)
        return totals

    def close(self) -> None:
        if not self._fh.closed:
            self._sync()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_store(path, n_topics: int, fsync: bool = True) -> ColumnStore:
    return ColumnStore(path, n_topics, fsync=fsync)


class BufferCache:
    """LRU cache of store columns, bounded in bytes.

    Dirty columns are written back before eviction and on :meth:`write_back`.
    With zero capacity every access goes straight to the file.
    """

    def __init__(self, store: ColumnStore, capacity_bytes: int):
        if capacity_bytes < 0:
            raise ValueError("capacity must be non-negative")
        self.store = store
        self.capacity_bytes = int(capacity_bytes)
        self.max_columns = self.capacity_bytes // store.column_bytes
        self._cols: OrderedDict[int, np.ndarray] = OrderedDict()
        self._dirty: set[int] = set()
        self.hits = 0
        self.misses = 0

    @property
    def resident_bytes(self) -> int:
        return len(self._cols) * self.store.column_bytes

    def __contains__(self, w) -> bool:
        return w in self._cols

    def is_dirty(self, w) -> bool:
        return w in self._dirty

    def _evict_for(self, n_new: int):
        victims = []
        while self._cols and len(self._cols) + n_new > self.max_columns:
            w, col = self._cols.popitem(last=False)
            if w in self._dirty:
                self._dirty.discard(w)
                victims.append((w, col))
        if victims:
            victims.sort(key=lambda v: v[0])
            self.store.write_columns([w for w, _ in victims], [c for _, c in victims])

    def fetch(self, word_ids) -> np.ndarray:
        """Copies of the requested columns, read in ascending id order."""
        word_ids = [int(w) for w in word_ids]
        out = np.empty((len(word_ids), self.store.n_topics))
        for j, w in enumerate(word_ids):
            col = self._cols.get(w)
            if col is not None:
                self._cols.move_to_end(w)
                self.hits += 1
            else:
                self.misses += 1
                col = self.store.read_column(w)
                if self.max_columns > 0:
                    self._evict_for(1)
                    self._cols[w] = col
            out[j] = col
        return out

    def update(self, word_ids, columns) -> None:
        """Replace columns; resident ones are marked dirty, the rest written through."""
        through_ids, through_cols = [], []
        for w, col in zip(word_ids, columns):
            w = int(w)
            col = np.array(col, dtype=np.float64)
            if w in self._cols:
                self._cols[w] = col
                self._cols.move_to_end(w)
                self._dirty.add(w)
            elif self.max_columns > 0:
                self._evict_for(1)
                self._cols[w] = col
                self._dirty.add(w)
            else:
                through_ids.append(w)
                through_cols.append(col)
        if through_ids:
            self.store.write_columns(through_ids, through_cols)

    def write_back(self, word_ids=None) -> int:
        """Persist dirty columns (all of them by default); returns how many."""
        if word_ids is None:
            ids = sorted(self._dirty)
        else:
            ids = sorted(int(w) for w in word_ids if int(w) in self._dirty)
        if ids:
            self.store.write_columns(ids, [self._cols[w] for w in ids])
            self._dirty.difference_update(ids)
        return len(ids)


class StoreStats(GlobalStats):
    """:class:`GlobalStats` whose columns live in a :class:`ColumnStore`.

    Topic totals stay in memory and are rebuilt by a column scan on open.
    """

    def __init__(self, store: ColumnStore, buffer_bytes: int = 0):
        self.n_topics = store.n_topics
        self.store = store
        self.cache = BufferCache(store, buffer_bytes)
        self.totals = store.scan_totals()
        self.lock = threading.RLock()

    @classmethod
    def open(cls, path, n_topics: int, buffer_bytes: int = 0, fsync: bool = True) -> "StoreStats":
        return cls(open_store(path, n_topics, fsync=fsync), buffer_bytes)

    @property
    def vocab_size(self) -> int:
        return self.store.vocab_size

    def extend(self, vocab_size: int) -> None:
        if vocab_size > self.store.vocab_size:
            with self.lock:
                self.store.extend(vocab_size)

    def get(self, word_ids) -> np.ndarray:
        with self.lock:
            return self.cache.fetch(word_ids)

    def put(self, word_ids, columns) -> None:
        self.cache.update(word_ids, columns)

    def flush(self) -> None:
        with self.lock:
            self.cache.write_back()

    def to_array(self) -> np.ndarray:
        with self.lock:
            self.cache.write_back()
            return self.store.read_all()

    def close(self) -> None:
        self.flush()
        self.store.close()
