import gc
import io
import logging
import weakref

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from streamlda import inference
from streamlda.corpus import SparseBatch, batches_from_csr
from streamlda.inference import BatchEngine, Hyperparams, ScheduleConfig, run_batch
from streamlda.online import (
    BatchGradient,
    BatchMetrics,
    learning_rate,
    new_state,
    process_batch,
    run_stream,
    TopWordTracker,
    topic_shift_report,
    write_metrics,
)
from streamlda.stats import GlobalStats
from streamlda.synthetic import lda_corpus

H = Hyperparams(4, 0.05, 0.02)
CFG = ScheduleConfig(topic_budget=3)


@pytest.fixture(scope="module")
def corpus():
    x, _ = lda_corpus(120, 60, 4, seed=5)
    return x


class TestLearningRate:
    def test_values(self):
        assert learning_rate(2) == 1.0
        assert learning_rate(11) == pytest.approx(0.1)

    def test_undefined_for_first_batch(self):
        with pytest.raises(ValueError):
            learning_rate(1)


class TestProcessBatch:
    def test_first_batch_is_batch_abp(self, corpus):
        (first, *_) = batches_from_csr(corpus, 40)
        state, grad, metrics = process_batch(new_state(4), first, H, CFG, np.random.default_rng(3))
        ref = BatchEngine(first, H, CFG, np.random.default_rng(3), vocab_size=state.stats.vocab_size)
        ref.run()
        assert metrics.iterations == ref.iterations
        np.testing.assert_array_equal(grad.delta, ref.gradient())
        np.testing.assert_array_equal(state.stats.to_array()[first.word_ids], ref.gradient())

    def test_whole_corpus_batch_is_bit_identical_to_abp(self, corpus):
        state = run_stream(batches_from_csr(corpus, 10**6), H, CFG, seed=9)
        ref = run_batch(SparseBatch.from_csr(corpus), H, CFG, seed=9)
        np.testing.assert_array_equal(state.stats.to_array(), ref.topic_word_stats())

    def test_two_batches_accumulate(self, corpus):
        b1, b2 = batches_from_csr(corpus[:80], 40)
        grads = []
        state = run_stream([b1, b2], H, CFG, seed=1, callback=lambda s, g, m: grads.append(g))
        # Instrumented replay: record each batch's gradient independently.
        rng = np.random.default_rng(1)
        W = state.stats.vocab_size
        e1 = BatchEngine(b1, H, CFG, rng, vocab_size=b1.vocab_size)
        e1.run()
        phi = np.zeros((W, 4))
        phi[b1.word_ids] = e1.gradient()
        e2 = BatchEngine(b2, H, CFG, rng, vocab_size=W, phi_prior=phi[b2.word_ids].copy(),
                         totals_prior=phi.sum(0))
        e2.run()
        expected = phi.copy()
        expected[b2.word_ids] += e2.gradient()
        np.testing.assert_allclose(state.stats.to_array(), expected, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(grads[1].delta, e2.gradient())

    def test_out_of_order_batch(self, corpus):
        b1, b2, *_ = batches_from_csr(corpus, 40)
        with pytest.raises(ValueError, match="expected batch 1"):
            process_batch(new_state(4), b2, H, CFG, np.random.default_rng(0))

    def test_empty_batch_skipped(self, caplog):
        b = SparseBatch.from_csr(sp.csr_matrix((2, 5)))
        state = new_state(3)
        with caplog.at_level(logging.WARNING):
            state, grad, metrics = process_batch(state, b, Hyperparams(3), CFG, np.random.default_rng(0))
        assert grad is None and state.batches_seen == 1 and state.docs_seen == 0
        assert "no nonzeros" in caplog.text

    def test_engine_released_after_batch(self, corpus, monkeypatch):
        refs = []
        original = inference.BatchEngine.__post_init__

        def track(self):
            original(self)
            refs.append(weakref.ref(self.mu))

        monkeypatch.setattr(inference.BatchEngine, "__post_init__", track)
        run_stream(batches_from_csr(corpus, 30), H, CFG, seed=0)
        gc.collect()
        assert len(refs) == 4
        assert all(r() is None for r in refs)

    def test_totals_track_columns(self, corpus):
        state = run_stream(batches_from_csr(corpus, 25), H, CFG, seed=2)
        np.testing.assert_allclose(state.stats.totals, state.stats.to_array().sum(0), rtol=1e-12)
        np.testing.assert_allclose(state.stats.totals.sum(), corpus.sum(), rtol=1e-12)
        assert state.docs_seen == 120 and state.tokens_seen == corpus.sum()


class TestVocabularyGrowth:
    def test_new_words_enter_denominator(self, monkeypatch):
        b1 = SparseBatch.from_csr(sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]])), index=1)
        b2 = SparseBatch.from_csr(sp.csr_matrix(np.array([[1.0, 0.0, 2.0, 1.0]])), index=2)
        seen = []
        original = inference.BatchEngine.__post_init__

        def track(self):
            original(self)
            seen.append(self.vocab_size)

        monkeypatch.setattr(inference.BatchEngine, "__post_init__", track)
        state = run_stream([b1, b2], H, CFG, seed=0)
        assert seen == [2, 4]
        assert state.stats.vocab_size == 4
        np.testing.assert_allclose(state.stats.to_array()[2:].sum(1), [2, 1], rtol=1e-12)


class TestTopicShift:
    def test_zero_gradient_no_shift(self):
        prior = np.random.default_rng(0).random((20, 3))
        report = topic_shift_report(np.zeros((20, 3)), prior, top_n=5)
        assert all(not s.changed and s.before == s.after for s in report)

    def test_concentrated_gradient_rises(self):
        prior = np.tile(np.arange(20, 0, -1, dtype=float)[:, None], (1, 2))
        delta = np.zeros((20, 2))
        delta[15, 1] = 100.0
        report = topic_shift_report(delta, prior, top_n=5)
        assert not report[0].changed
        assert report[1].entered == [15] and report[1].exited == [4]

    def test_batch_gradient_rows(self):
        prior = np.ones((6, 2))
        grad = BatchGradient(np.array([4]), np.array([[5.0, 0.0]]), prior[[4]])
        report = topic_shift_report(grad, prior, top_n=2)
        assert report[0].after[0] == 4 and report[0].entered == [4]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 29), st.floats(0.01, 100))
    def test_monotone_rank(self, seed, w, bump):
        prior = np.random.default_rng(seed).random((30, 1))
        delta = np.zeros((30, 1))
        delta[w] = bump
        before = list(np.argsort(-prior[:, 0], kind="stable"))
        after = topic_shift_report(delta, prior, top_n=30)[0].after
        assert after.index(w) <= before.index(w)


class TestTopWordTracker:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_matches_full_report(self, seed, top_n):
        rng = np.random.default_rng(seed)
        K, W = 3, 0
        full = np.zeros((0, K))
        tracker = TopWordTracker(K, top_n)
        for _ in range(6):
            W += int(rng.integers(0, 4))
            ids = np.unique(rng.integers(0, max(W, 1), size=int(rng.integers(1, 6))))
            W = max(W, int(ids[-1]) + 1)
            full = np.vstack((full, np.zeros((W - len(full), K))))
            # Small integer weights make ties common.
            delta = rng.integers(0, 3, size=(len(ids), K)).astype(float)
            grad = BatchGradient(ids, delta, full[ids].copy())
            want = topic_shift_report(grad, full, top_n)
            got = tracker.update(grad)
            full[ids] += delta
            for a, b in zip(got, want):
                assert (a.before, a.after, a.entered, a.exited, a.moved) == (
                    b.before, b.after, b.entered, b.exited, b.moved)

    def test_rejects_negative_gradient(self):
        t = TopWordTracker(1, 2)
        with pytest.raises(ValueError):
            t.update(BatchGradient(np.array([0]), np.array([[-1.0]]), np.zeros((1, 1))))


def test_metrics_csv_excludes_time_by_default():
    rows = [BatchMetrics(1, 10, 3, 0.123, 0.05, 40), BatchMetrics(2, 20, 2, 0.2, 0.04, 41, 12.5)]
    fh = io.StringIO()
    write_metrics(rows, fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "batch,docs_seen,iterations,mean_residual,vocab_size,perplexity"
    assert lines[1] == "1,10,3,0.05,40,"
    fh = io.StringIO()
    write_metrics(rows, fh, include_time=True)
    assert fh.getvalue().splitlines()[0].endswith(",wall_time")


def test_stats_extend_preserves_columns():
    s = GlobalStats(2)
    s.extend(3)
    s.put([1], np.array([[1.0, 2.0]]))
    s.extend(100)
    assert s.vocab_size == 100
    np.testing.assert_array_equal(s.get([1, 50]), [[1, 2], [0, 0]])
