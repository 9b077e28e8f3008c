import io

import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from streamlda.corpus import SparseBatch, VocabularyMap
from streamlda.eval import (
    fold_in,
    predictive_perplexity,
    top_words,
    topic_word_distribution,
    training_perplexity,
    write_perplexity_csv,
    write_top_words_tsv,
    PerplexityRecord,
)
from streamlda.inference import Hyperparams


class TestFoldIn:
    def test_single_topic(self):
        theta = fold_in([0, 2], [3, 1], np.ones((4, 1)) / 4, Hyperparams(1))
        np.testing.assert_array_equal(theta, [1.0])

    def test_support_restriction(self):
        phi = np.array([[1e-12, 0.5, 1e-12], [1e-12, 0.5, 1e-12]])
        theta = fold_in([0, 1], [4, 2], phi, Hyperparams(3, 1e-9, 0.01))
        assert theta[1] > 1 - 1e-8

    def test_empty_document(self):
        with pytest.raises(ValueError):
            fold_in([], [], np.ones((2, 2)), Hyperparams(2))

    def test_matches_fixed_point_oracle(self):
        rng = np.random.default_rng(7)
        phi = rng.dirichlet(np.ones(12), size=3).T
        words, counts = np.array([0, 3, 4, 9, 11]), np.array([2.0, 1.0, 5.0, 1.0, 3.0])
        h = Hyperparams(3, 0.3, 0.01)
        got = fold_in(words, counts, phi, h, iters=5000, threshold=1e-15)
        th_hat = oracles.fold_in_fixed_point(counts, phi[words], h.alpha)
        want = (th_hat + h.alpha) / (th_hat.sum() + 3 * h.alpha)
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)


class TestPerplexity:
    def test_uniform_phi_gives_vocab_size(self):
        test = sp.csr_matrix(np.array([[2, 0, 1, 3, 0, 1], [0, 4, 0, 0, 2, 0]]))
        rec = predictive_perplexity(test, np.zeros((6, 3)), Hyperparams(3, 0.5, 0.01))
        assert rec.perplexity == pytest.approx(6.0, rel=1e-12)
        assert rec.tokens_evaluated == 13

    def test_single_word_vocabulary(self):
        test = sp.csr_matrix(np.array([[5], [2]]))
        rec = predictive_perplexity(test, np.array([[10.0, 3.0]]), Hyperparams(2))
        assert rec.perplexity == pytest.approx(1.0, rel=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        x = rng.integers(0, 3, size=(4, 7)).astype(float)
        x[:, 0] += 1
        phi_hat = rng.random((7, 3)) * 10
        h = Hyperparams(3, 0.2, 0.05)
        rec = predictive_perplexity(sp.csr_matrix(x), phi_hat, h, iters=5000, threshold=1e-15)
        phi = (phi_hat + h.beta) / (phi_hat.sum(0) + 7 * h.beta)
        theta = np.array([fold_in(np.flatnonzero(r), r[r > 0], phi, h, iters=5000, threshold=1e-15) for r in x])
        ll = oracles.log_likelihood(x, theta, phi)
        assert rec.perplexity == pytest.approx(np.exp(-ll / x.sum()), rel=1e-10)

    def test_unseen_words_use_prior_column(self):
        h = Hyperparams(2, 0.1, 0.5)
        phi_hat = np.array([[3.0, 1.0]])
        rows = topic_word_distribution(phi_hat, h, vocab_size=3, rows=[0, 2])
        np.testing.assert_allclose(rows[1], 0.5 / (np.array([3.0, 1.0]) + 1.5))
        test = sp.csr_matrix(np.array([[1, 0, 2]]))
        rec = predictive_perplexity(test, phi_hat, h, vocab_size=3)
        assert np.isfinite(rec.perplexity)

    def test_split_protocol(self):
        rng = np.random.default_rng(0)
        test = sp.csr_matrix(rng.integers(0, 4, size=(5, 10)).astype(float) + 1)
        phi_hat = rng.random((10, 3))
        a = predictive_perplexity(test, phi_hat, Hyperparams(3), protocol="split", seed=4)
        b = predictive_perplexity(test, phi_hat, Hyperparams(3), protocol="split", seed=4)
        assert a == b
        assert 0 < a.tokens_evaluated < test.sum()
        with pytest.raises(ValueError):
            predictive_perplexity(test, phi_hat, Hyperparams(3), protocol="nope")

    def test_empty_test_set(self):
        with pytest.raises(ValueError):
            predictive_perplexity(sp.csr_matrix((2, 3)), np.ones((3, 2)), Hyperparams(2))

    def test_training_perplexity(self):
        x = np.array([[2.0, 1.0], [0.0, 3.0]])
        b = SparseBatch.from_csr(sp.csr_matrix(x))
        theta = np.array([[0.5, 0.5], [0.2, 0.8]])
        phi = np.array([[0.6, 0.1], [0.4, 0.9]])
        ll = oracles.log_likelihood(x, theta, phi)
        assert training_perplexity(b, theta, phi) == pytest.approx(np.exp(-ll / 6), rel=1e-13)


class TestTopWords:
    def test_all_zero_column(self):
        assert [t for t, _ in top_words(np.zeros((6, 2)), None, 1, 3)] == ["0", "1", "2"]

    def test_one_hot(self):
        col = np.zeros((5, 1))
        col[3] = 1
        v = VocabularyMap(list("abcde"))
        assert top_words(col, v, 0, 2)[0] == ("d", 1.0)

    def test_matches_full_sort(self):
        rng = np.random.default_rng(1)
        phi = rng.integers(0, 5, size=(50, 3)).astype(float)
        for k in range(3):
            want = sorted(range(50), key=lambda w: (-phi[w, k], w))[:10]
            assert [int(t) for t, _ in top_words(phi, None, k, 10)] == want


def test_writers():
    fh = io.StringIO()
    write_perplexity_csv([PerplexityRecord(100, 1234.5, 77)], fh)
    assert fh.getvalue() == "docs_seen,perplexity,tokens\n100,1234.5,77\n"
    fh = io.StringIO()
    write_top_words_tsv(np.array([[1.0], [2.0]]), VocabularyMap(["x", "y"]), fh, n=2)
    assert fh.getvalue().splitlines() == ["topic\trank\ttoken\tweight", "0\t1\ty\t2.0", "0\t2\tx\t1.0"]
