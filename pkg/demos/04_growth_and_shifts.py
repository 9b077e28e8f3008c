"""
Growing vocabulary and topic shifts
===================================

Text streams keep introducing new words. Here the second half of a stream
brings 50 tokens never seen before; they get fresh ids and enter the
model in the batch that brings them. Then a generating topic changes its
leading word mid-stream and the shift report picks it up.
"""

import numpy as np
import scipy.sparse as sp

from streamlda.corpus import VocabularyMap, batches_from_csr, iter_text_documents, stream_batches
from streamlda.inference import Hyperparams, ScheduleConfig
from streamlda.online import TopWordTracker, run_stream
from streamlda.synthetic import block_topics, sample_documents

rng = np.random.default_rng(4)
words = [f"w{i}" for i in range(150)]
topics = block_topics(5, 150, rng=rng)
old = topics[:, :100] / topics[:, :100].sum(axis=1, keepdims=True)
docs = np.zeros((400, 150), dtype=int)
docs[:200, :100] = sample_documents(old, 200, (30, 60), 0.1, rng).toarray()
docs[200:] = sample_documents(topics, 200, (30, 60), 0.1, rng).toarray()
lines = [" ".join(w for i, c in enumerate(row) for w in [words[i]] * c) for row in docs]

vocab = VocabularyMap()


def show_growth(state, grad, metrics):
    print(f"batch {metrics.batch}: W = {metrics.vocab_size}")


run_stream(stream_batches(iter_text_documents(lines, vocab), 50, vocab), Hyperparams(5, 0.1, 0.05),
           ScheduleConfig(topic_budget=2), seed=4, callback=show_growth)
print(f"final vocabulary: {len(vocab)} tokens\n")

# Topic 0 leads with word 0 until batch 15, then word 30 takes its place.
K, W = 10, 500
edges = np.linspace(0, W, K + 1).astype(int)
topics = np.full((K, W), 0.05 / W)
for k in range(K):
    z = 1.0 / np.arange(1, edges[k + 1] - edges[k] + 1)
    topics[k, edges[k]:edges[k + 1]] += 0.95 * z / z.sum()
swapped = topics.copy()
swapped[0, [0, 30]] = topics[0, [30, 0]]
x = sp.vstack([sample_documents(swapped if s >= 15 else topics, 100, (40, 80), 0.05, rng)
               for s in range(1, 26)]).tocsr()

tracker = TopWordTracker(K, top_n=10)


def show_shifts(state, grad, metrics):
    # Small rank swaps among a topic's tail words happen all the time; print
    # only the events that involve the two swapped words.
    for shift in tracker.update(grad):
        hits = [w for w in shift.entered if w == 30] + [w for w in shift.exited if w == 0]
        if hits:
            print(f"batch {metrics.batch:2d} topic {shift.topic}: entered {shift.entered} exited {shift.exited}")
        if metrics.batch == 14 and shift.after[:1] == [0]:
            print(f"before the swap, topic {shift.topic} leads with word 0: {shift.after}")


run_stream(batches_from_csr(x, 100), Hyperparams(K, 0.01, 0.01), ScheduleConfig(), seed=4, callback=show_shifts)
