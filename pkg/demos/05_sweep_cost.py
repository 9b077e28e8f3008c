"""
Per-sweep cost against the number of topics
============================================

Synchronous BP touches every topic of every message, so a sweep costs
O(K * NNZ). Active BP updates a fixed budget of topics per word after the
first sweep, so its cost grows only through topic selection. Time one
sweep of each for several K on the same corpus.
"""

import time

import numpy as np

from streamlda.corpus import SparseBatch
from streamlda.inference import BatchEngine, Hyperparams, ScheduleConfig
from streamlda.synthetic import lda_corpus

x, _ = lda_corpus(500, 200, 10, doc_length=(60, 100), seed=0)
batch = SparseBatch.from_csr(x)


def sweep_time(kind, K, repeats=3):
    engine = BatchEngine(batch, Hyperparams(K), ScheduleConfig(kind=kind, topic_budget=30),
                         np.random.default_rng(0))
    engine.sweep()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        engine.sweep()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


sweep_time("active", 40, 1)
sweep_time("synchronous", 40, 1)
print(f"{batch.nnz} nonzeros, topic budget 30")
print(f"{'K':>5s} {'ABP ms':>8s} {'BP ms':>8s}")
for K in (50, 100, 200, 500, 1000):
    print(f"{K:5d} {1e3 * sweep_time('active', K):8.2f} {1e3 * sweep_time('synchronous', K):8.2f}")
