"""
Batch inference with four message-passing schedules
===================================================

Sample a small corpus from a known 10-topic model, then fit it with
synchronous BP, residual BP, active BP and the EM path. Each run starts
from the same random messages; we compare sweeps, message updates and
held-out perplexity.
"""

import time

import numpy as np

from streamlda.corpus import SparseBatch, split_train_test
from streamlda.eval import predictive_perplexity, top_words
from streamlda.inference import Hyperparams, ScheduleConfig, run_batch
from streamlda.synthetic import block_topics, sample_documents

rng = np.random.default_rng(0)
topics = block_topics(10, 500, rng=rng)
x = sample_documents(topics, 3500, (40, 80), 0.05, rng)
train, test, _ = split_train_test(x, 500, 0)
batch = SparseBatch.from_csr(train)
print(f"{batch.doc_count} training documents, {batch.n_words} words, {batch.nnz} nonzeros")

# Small symmetric priors; the EM path needs alpha, beta >= 1 for a proper
# MAP M-step, so it gets its own.
hyper = Hyperparams(10, alpha=0.01, beta=0.01)
runs = {
    "BP  (synchronous)": (ScheduleConfig(kind="synchronous"), hyper),
    "RBP (residual)": (ScheduleConfig(kind="residual"), hyper),
    "ABP (3 of 10 topics)": (ScheduleConfig(kind="active", topic_budget=3), hyper),
    "ABP (5 of 10 topics)": (ScheduleConfig(kind="active", topic_budget=5), hyper),
    "EM": (ScheduleConfig(kind="em"), Hyperparams(10, 1.01, 1.01)),
}

print(f"\n{'schedule':22s} {'sweeps':>6s} {'updates':>9s} {'time':>7s} {'perplexity':>10s}")
for name, (schedule, h) in runs.items():
    start = time.perf_counter()
    engine = run_batch(batch, h, schedule, seed=0)
    elapsed = time.perf_counter() - start
    updates = sum(s.updates for s in engine.history)
    perp = predictive_perplexity(test, engine.topic_word_stats(), h).perplexity
    print(f"{name:22s} {engine.iterations:6d} {updates:9d} {elapsed:6.2f}s {perp:10.2f}")

# A budget far below the number of topics a word needs lets each word move
# mass among only a few topics per sweep, so the residual falls under the
# threshold before the fit has mixed (the 3-topic run). The budget is meant
# to be small relative to a large K; the usual setting is 30.

# Each generating topic owns a block of 50 consecutive word ids, so a
# recovered topic's top words should fall in one block.
phi_hat = engine.topic_word_stats()
print("\nTop words of the last fit (word id // 50 is the generating block):")
for k in range(3):
    ids = [int(w) for w, _ in top_words(phi_hat, None, k, 8)]
    print(f"  topic {k}: {ids}  blocks {sorted({w // 50 for w in ids})}")
