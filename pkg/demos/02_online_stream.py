"""
Online BP on a document stream
==============================

Stream 20,000 documents in mini-batches of 100. Each batch is fitted by
active BP warm-started from the statistics accumulated so far, then
discarded. Held-out perplexity is tracked along the way and compared with
batch ABP on all the data at once.
"""

import numpy as np

from streamlda.corpus import SparseBatch, batches_from_csr, split_train_test
from streamlda.eval import predictive_perplexity
from streamlda.inference import Hyperparams, ScheduleConfig, run_batch
from streamlda.online import learning_rate, run_stream
from streamlda.synthetic import block_topics, sample_documents

rng = np.random.default_rng(1)
x = sample_documents(block_topics(10, 500, rng=rng), 21000, (40, 80), 0.05, rng)
train, test, _ = split_train_test(x, 1000, 1)
hyper, schedule = Hyperparams(10, 0.01, 0.01), ScheduleConfig()


def report(state, grad, metrics):
    if metrics.batch % 20 == 0:
        rec = predictive_perplexity(test, state.stats.to_array(), hyper, totals=state.stats.totals,
                                    vocab_size=train.shape[1])
        print(f"batch {metrics.batch:4d}  docs {metrics.docs_seen:6d}  sweeps {metrics.iterations:3d}  "
              f"perplexity {rec.perplexity:7.2f}")


print("OBP, 100 documents per batch:")
state = run_stream(batches_from_csr(train, 100), hyper, schedule, seed=1, callback=report)
print(f"mean sweeps per batch: {state.mean_iterations:.1f}")

# Adding raw batch statistics is a stochastic-approximation step whose
# implicit rate shrinks like 1/(s-1).
print("implicit step size at batches 2, 11, 101:", [round(learning_rate(s), 3) for s in (2, 11, 101)])

abp = run_batch(SparseBatch.from_csr(train), hyper, schedule, seed=1)
ref = predictive_perplexity(test, abp.topic_word_stats(), hyper).perplexity
print(f"batch ABP on all {train.shape[0]} documents: perplexity {ref:.2f} after {abp.iterations} sweeps")

# With a single batch holding every document, OBP is batch ABP exactly.
one = run_stream(batches_from_csr(train[:500], 10**6), hyper, schedule, seed=2)
same = run_batch(SparseBatch.from_csr(train[:500]), hyper, schedule, seed=2)
print("single-batch OBP equals batch ABP bit for bit:",
      one.stats.to_array().tobytes() == same.topic_word_stats().tobytes())
