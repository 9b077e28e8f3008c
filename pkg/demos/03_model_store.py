"""
Keeping the topic-word matrix on disk
=====================================

The only state OBP carries between batches is the (W, K) statistics
matrix. ``StoreStats`` keeps it in a column file with an LRU buffer, so
memory is bounded by the buffer rather than by W. Results are identical to
the in-memory run for any buffer size; only disk traffic changes.
"""

import os
import tempfile
import zlib

import numpy as np

from streamlda.corpus import batches_from_csr
from streamlda.inference import Hyperparams, ScheduleConfig
from streamlda.modelstore import RECORD_HEAD, StoreStats, open_store
from streamlda.online import run_stream
from streamlda.synthetic import lda_corpus

K = 20
x, _ = lda_corpus(2000, 2000, K, seed=3)
hyper, schedule = Hyperparams(K, 0.05, 0.02), ScheduleConfig(topic_budget=5)
memory = run_stream(batches_from_csr(x, 200), hyper, schedule, seed=3).stats.to_array()
footprint = x.shape[1] * K * 8
print(f"full matrix: {x.shape[1]} columns x {K} topics = {footprint // 1024} KiB")

with tempfile.TemporaryDirectory() as tmp:
    for frac in (0.0, 0.25, 0.5, 1.0):
        path = os.path.join(tmp, f"model{frac}.obps")
        stats = StoreStats.open(path, K, buffer_bytes=int(frac * footprint), fsync=False)
        run_stream(batches_from_csr(x, 200), hyper, schedule, seed=3, stats=stats)
        same = np.array_equal(stats.to_array(), memory)
        print(f"buffer {frac:4.0%}: {stats.store.reads:6d} column reads, {stats.store.writes:6d} writes, "
              f"identical to in-memory: {same}")
        stats.close()

    # Every batch touches most of the vocabulary in id order, which is the
    # worst case for LRU: a buffer smaller than that working set evicts each
    # column before it comes round again, so only the full buffer saves reads.
    # Writes are the same at every size because each batch is flushed.

    # Column writes are journaled first, so a crash leaves every column
    # either old or new. Simulate one: write a journal by hand and reopen.
    path = os.path.join(tmp, "crash.obps")
    with open_store(path, 4) as store:
        store.extend(3)
        store.write_columns([0, 1, 2], np.ones((3, 4)))
    raw = np.full(4, 7.0).astype("<f8").tobytes()
    with open(path + ".journal", "wb") as fh:
        fh.write(RECORD_HEAD.pack(1, zlib.crc32(raw)) + raw)
        fh.write(b"\x02\x00\x00")  # a torn second record
    with open_store(path, 4) as store:
        print("after recovery:", store.read_all()[:, 0], "journal gone:", not os.path.exists(path + ".journal"))
