"""Batch message passing for collapsed LDA.

One :class:`BatchEngine` holds the messages and statistics of a single
:class:`~streamlda.corpus.SparseBatch` and advances them sweep by sweep
under one of four schedules:

``synchronous``
    every message recomputed from the previous sweep's statistics (BP).
``residual``
    asynchronous, words visited in descending residual order (RBP).
``active``
    residual order, but after the first sweep each word only updates its
    top-residual topics and only the top ``eta_w`` share of words is
    visited (ABP).
``em``
    E-step / M-step iterations without self-exclusion; the convergence
    oracle.

Topic-word statistics are stored word-major, shape ``(W, K)``: row ``w``
is the statistic column of word ``w``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .corpus import SparseBatch

SCHEDULES = ("synchronous", "residual", "active", "em")


@dataclass(frozen=True)
class Hyperparams:
    n_topics: int
    alpha: float = 0.01
    beta: float = 0.01

    def __post_init__(self):
        if self.n_topics < 1:
            raise ValueError(f"n_topics must be >= 1, got {self.n_topics}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")


@dataclass(frozen=True)
class ScheduleConfig:
    """Sweep schedule and stopping rule.

    The per-word topic budget is ``topic_budget`` when set, otherwise
    ``ceil(eta_k * K)``.

    ``cold_start_iters`` is the minimum number of sweeps before the
    convergence test is trusted when a batch starts without prior
    statistics: from random messages the mean residual dips below any
    practical threshold for a few sweeps while the topics are still
    symmetric. Warm-started batches use the test from the first sweep.
    """

    kind: str = "active"
    topic_budget: int | None = 30
    eta_k: float = 1.0
    eta_w: float = 1.0
    threshold: float = 0.1
    max_iters: int = 50
    cold_start_iters: int = 20

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        if self.topic_budget is not None and self.topic_budget < 1:
            raise ValueError("topic_budget must be >= 1")
        if not 0 < self.eta_k <= 1 or not 0 < self.eta_w <= 1:
            raise ValueError("eta_k and eta_w must lie in (0, 1]")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.cold_start_iters < 1:
            raise ValueError("cold_start_iters must be >= 1")

    def budget(self, n_topics: int) -> int:
        if self.topic_budget is not None:
            return min(self.topic_budget, n_topics)
        return min(math.ceil(self.eta_k * n_topics), n_topics)


@dataclass
class ResidualIndex:
    word_residuals: np.ndarray  # r_w, (n_words,)
    topic_residuals: np.ndarray  # r_w(k), (n_words, K)
    word_order: np.ndarray  # local word indices, descending r_w

    def topic_subset(self, w: int, budget: int) -> np.ndarray:
        return select_active_topics(self.topic_residuals[w], budget)

    @property
    def total(self) -> float:
        return float(self.word_residuals.sum())


@dataclass
class SweepStats:
    iteration: int
    mean_residual: float
    words_visited: int
    updates: int


# -- single-message operations --------------------------------------------


def init_messages(batch: SparseBatch, hyper: Hyperparams, rng: np.random.Generator,
                  topic_major: bool = False):
    """Random normalized messages and the statistics they imply.

    Returns ``(mu, theta_hat, phi_contribution)`` with shapes
    ``(nnz, K)``, ``(D_s, K)`` and ``(n_words, K)``. ``topic_major`` stores
    ``mu`` in column-major order; values are identical either way.
    """
    K = hyper.n_topics
    mu = 1.0 - rng.random((batch.nnz, K))  # (0, 1]: strictly positive
    mu /= mu.sum(axis=1, keepdims=True)
    if topic_major:
        mu = np.asfortranarray(mu)
    theta = np.zeros((batch.doc_count, K))
    phi = np.zeros((batch.n_words, K))
    _kernels.accumulate(batch.word_ptr, batch.doc_index, batch.counts, mu, theta, phi)
    return mu, theta, phi


def update_message(x, mu, theta_d, phi_w, totals, hyper: Hyperparams, vocab_size: int, topics=None):
    """Recompute one message from its neighbours' statistics.

    ``theta_d``, ``phi_w`` and ``totals`` include the message's own
    contribution ``x * mu``, which is subtracted out. When ``topics`` is a
    strict subset, entries outside it are left alone and the subset is
    rescaled to the mass it already held, so the vector still sums to one.
    """
    mu = np.asarray(mu, dtype=np.float64)
    K = mu.shape[0]
    if topics is None:
        topics = np.arange(K)
    topics = np.sort(np.asarray(topics, dtype=np.int64))
    n_sub = len(topics)
    full = n_sub == K
    buf = np.empty(K)
    new = np.empty(K)
    total = _kernels.message(mu, float(x), np.asarray(theta_d, float), np.asarray(phi_w, float),
                             np.asarray(totals, float), topics, n_sub, hyper.alpha, hyper.beta,
                             vocab_size * hyper.beta, buf)
    _kernels.renormalize(mu, topics, n_sub, full, buf, total, new)
    out = mu.copy()
    out[topics] = new[:n_sub]
    return out


def apply_message(x, mu_old, mu_new, theta_d, phi_w, totals):
    """Move ``x * (mu_new - mu_old)`` into the statistics, in place.

    Returns the per-topic residual ``x * |mu_new - mu_old|``.
    """
    delta = x * (np.asarray(mu_new) - np.asarray(mu_old))
    theta_d += delta
    phi_w += delta
    totals += delta
    return np.abs(delta)


def select_active_topics(residuals, n: int) -> np.ndarray:
    """Indices of the ``n`` largest residuals, lower index first on ties.

    Only a partial order is computed (``np.partition``); the result is
    returned sorted by index.
    """
    r = np.asarray(residuals, dtype=np.float64)
    K = r.shape[0]
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= K:
        return np.arange(K)
    cut = np.partition(r, K - n)[K - n]  # n-th largest value
    above = np.flatnonzero(r > cut)
    tied = np.flatnonzero(r == cut)[: n - len(above)]
    return np.sort(np.concatenate((above, tied)))


def check_convergence(residuals: ResidualIndex | np.ndarray, nnz: int, threshold: float) -> bool:
    total = residuals.total if isinstance(residuals, ResidualIndex) else float(np.sum(residuals))
    return total / nnz < threshold


def estimate_parameters(theta_hat, phi_hat, hyper: Hyperparams, totals=None, vocab_size=None):
    """Dirichlet-smoothed normalization of the sufficient statistics.

    ``theta[d, k] = (theta_hat[d, k] + alpha) / (sum_k theta_hat[d] + K alpha)``
    and ``phi[w, k] = (phi_hat[w, k] + beta) / (n_k + W beta)``, where
    ``n_k`` defaults to the column sums of ``phi_hat`` and ``W`` to its rows.
    """
    return _normalize(theta_hat, phi_hat, hyper.alpha, hyper.beta, totals, vocab_size)


def _normalize(theta_hat, phi_hat, a, b, totals, vocab_size):
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    K = phi_hat.shape[-1] if phi_hat.size else theta_hat.shape[-1]
    totals = phi_hat.sum(axis=0) if totals is None else np.asarray(totals, dtype=np.float64)
    W = phi_hat.shape[0] if vocab_size is None else vocab_size
    th_den = theta_hat.sum(axis=-1, keepdims=True) + K * a
    ph_den = totals + W * b
    if np.any(th_den <= 0) or np.any(ph_den <= 0):
        raise FloatingPointError("non-positive normalizer")
    return (theta_hat + a) / th_den, (phi_hat + b) / ph_den


def em_mstep(theta_hat, phi_hat, hyper: Hyperparams, totals=None, vocab_size=None):
    """MAP M-step with ``alpha - 1`` / ``beta - 1`` pseudo-counts.

    Only well posed for ``alpha, beta >= 1``; below that the numerators can
    go negative and the BP normalization (:func:`estimate_parameters`) is
    used instead.
    """
    if hyper.alpha < 1 or hyper.beta < 1:
        return estimate_parameters(theta_hat, phi_hat, hyper, totals, vocab_size)
    return _normalize(theta_hat, phi_hat, hyper.alpha - 1.0, hyper.beta - 1.0, totals, vocab_size)


def em_estep(theta_d, phi_w):
    """``mu(k) ~ theta_d(k) * phi_w(k)``."""
    p = np.asarray(theta_d, dtype=np.float64) * np.asarray(phi_w, dtype=np.float64)
    s = p.sum()
    if not s > 0:
        raise FloatingPointError("zero E-step normalizer")
    return p / s


def lower_bound(batch: SparseBatch, mu, theta, phi, hyper: Hyperparams) -> float:
    """Jensen lower bound of the LDA log-likelihood.

    ``phi`` is the full ``(W, K)`` parameter indexed by global word id;
    ``theta`` is ``(D_s, K)``. Zero messages contribute nothing to the
    entropy term; a zero parameter under a positive prior weight raises.
    """
    mu = np.asarray(mu)
    words = batch.entry_word_ids()
    docs = batch.doc_index
    ll = 0.0
    if batch.nnz:
        with np.errstate(divide="ignore", invalid="ignore"):
            # Separate logs: the product of two tiny factors can underflow.
            log_ratio = np.log(theta[docs]) + np.log(phi[words]) - np.log(mu)
            term = np.where(mu > 0, mu * log_ratio, 0.0)
        if not np.all(np.isfinite(term)):
            raise FloatingPointError("log of zero parameter under positive message")
        ll += float(np.sum(batch.counts[:, None] * term))
    for weight, par in ((hyper.alpha - 1.0, theta), (hyper.beta - 1.0, phi)):
        if weight == 0:
            continue
        if np.any(np.asarray(par) <= 0):
            raise FloatingPointError("log of zero parameter in prior term")
        ll += weight * float(np.sum(np.log(par)))
    return ll


# -- the engine -----------------------------------------------------------


@dataclass
class BatchEngine:
    """Messages and statistics of one mini-batch, advanced sweep by sweep.

    ``phi_prior`` / ``totals_prior`` are the topic-word statistics of
    everything seen before this batch (rows aligned with
    ``batch.word_ids``); the batch's own contribution is added on top. With
    no prior the engine is plain batch inference.
    """

    batch: SparseBatch
    hyper: Hyperparams
    schedule: ScheduleConfig
    rng: np.random.Generator
    vocab_size: int | None = None
    phi_prior: np.ndarray | None = None
    totals_prior: np.ndarray | None = None
    history: list[SweepStats] = field(default_factory=list)

    def __post_init__(self):
        b, K = self.batch, self.hyper.n_topics
        if self.vocab_size is None:
            self.vocab_size = b.vocab_size
        # Subset sweeps touch a few topics of many consecutive messages, so
        # they want a word's messages for one topic to be contiguous.
        # Full-row schedules want the row-major layout.
        subset = self.schedule.kind == "active" and self.schedule.budget(K) < K
        self.mu, self.theta, contrib = init_messages(b, self.hyper, self.rng, topic_major=subset)
        if self.phi_prior is None:
            self.phi_prior = np.zeros((b.n_words, K))
        elif self.phi_prior.shape != (b.n_words, K):
            raise ValueError(f"phi_prior must have shape {(b.n_words, K)}, got {self.phi_prior.shape}")
        if self.totals_prior is None:
            self.totals_prior = np.zeros(K)
        self.phi = self.phi_prior + contrib
        self.totals = self.totals_prior + contrib.sum(axis=0)
        self.r_wk = np.zeros((b.n_words, K))
        self.r_w = np.zeros(b.n_words)
        self.order = np.arange(b.n_words)
        self.t = 0

    @property
    def iterations(self) -> int:
        return self.t

    @property
    def mean_residual(self) -> float:
        return float(self.r_w.sum()) / self.batch.nnz

    @property
    def residual_index(self) -> ResidualIndex:
        return ResidualIndex(self.r_w, self.r_wk, self.order)

    @property
    def cold(self) -> bool:
        """True when there were no prior statistics to start from."""
        return not np.any(self.totals_prior)

    @property
    def converged(self) -> bool:
        min_sweeps = self.schedule.cold_start_iters if self.cold else 1
        return self.t >= min_sweeps and check_convergence(self.r_w, self.batch.nnz, self.schedule.threshold)

    def _arrays(self):
        b = self.batch
        return b.word_ptr, b.doc_index, b.counts

    def sweep(self) -> SweepStats:
        self.t += 1
        kind = self.schedule.kind
        n_words = self.batch.n_words
        if kind == "synchronous":
            visited, updates = n_words, self.batch.nnz
            self._sync_sweep()
        elif kind == "em":
            visited, updates = n_words, self.batch.nnz
            self._em_sweep()
        else:
            if kind == "residual" or self.t == 1:
                visited, budget = n_words, self.hyper.n_topics
            else:
                visited = math.ceil(self.schedule.eta_w * n_words)
                budget = self.schedule.budget(self.hyper.n_topics)
            updates = _kernels.sweep_async(
                self.order, visited, budget, *self._arrays(), self.mu, self.theta, self.phi,
                self.totals, self.r_wk, self.r_w, self.hyper.alpha, self.hyper.beta,
                self.vocab_size * self.hyper.beta,
            )
        self.order = np.argsort(-self.r_w, kind="stable")
        stats = SweepStats(self.t, self.mean_residual, visited, updates)
        self.history.append(stats)
        return stats

    def run(self) -> list[SweepStats]:
        """Sweep until the mean residual is under threshold or ``max_iters``."""
        while self.t < self.schedule.max_iters:
            self.sweep()
            if self.converged:
                break
        return self.history

    def _recompute_stats(self):
        contrib = np.zeros_like(self.phi)
        self.theta[:] = 0.0
        _kernels.accumulate(*self._arrays(), self.mu, self.theta, contrib)
        self.phi = self.phi_prior + contrib
        self.totals = self.totals_prior + contrib.sum(axis=0)

    def _replace_messages(self, mu_new):
        _kernels.residuals(self.batch.word_ptr, self.batch.counts, self.mu, mu_new, self.r_wk, self.r_w)
        self.mu = mu_new
        self._recompute_stats()

    def _sync_sweep(self):
        mu_new = np.empty_like(self.mu)
        h = self.hyper
        _kernels.sync_messages(*self._arrays(), self.mu, self.theta, self.phi, self.totals,
                               h.alpha, h.beta, self.vocab_size * h.beta, mu_new)
        self._replace_messages(mu_new)

    def em_parameters(self):
        """``(theta, phi_rows)`` from the M-step on the current statistics."""
        return em_mstep(self.theta, self.phi, self.hyper, self.totals, self.vocab_size)

    def _em_sweep(self):
        theta, phi = self.em_parameters()
        mu_new = np.empty_like(self.mu)
        _kernels.em_messages(self.batch.word_ptr, self.batch.doc_index, theta, phi, mu_new)
        self._replace_messages(mu_new)

    def parameters(self):
        """Smoothed ``(theta, phi_rows)`` of the current state."""
        return estimate_parameters(self.theta, self.phi, self.hyper, self.totals, self.vocab_size)

    def gradient(self) -> np.ndarray:
        """The batch's own statistics ``sum_d x * mu``, rebuilt from the messages."""
        theta = np.zeros_like(self.theta)
        contrib = np.zeros_like(self.phi)
        _kernels.accumulate(*self._arrays(), self.mu, theta, contrib)
        return contrib

    def topic_word_stats(self) -> np.ndarray:
        """Full ``(W, K)`` statistics (prior plus gradient) indexed by global word id."""
        out = np.zeros((self.vocab_size, self.hyper.n_topics))
        out[self.batch.word_ids] = self.phi_prior + self.gradient()
        return out


def run_batch(batch: SparseBatch, hyper: Hyperparams, schedule: ScheduleConfig, seed) -> BatchEngine:
    """Batch inference on one batch to convergence; returns the engine."""
    engine = BatchEngine(batch, hyper, schedule, np.random.default_rng(seed))
    engine.run()
    return engine
