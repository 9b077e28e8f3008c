"""Online belief propagation over a stream of mini-batches.

Each batch is inferred with the active schedule, warm-started from the
statistics accumulated over all earlier batches. Once the batch converges
its gradient ``sum_d x * mu`` is folded into the global statistics and the
batch, its messages and its document statistics are dropped.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .corpus import SparseBatch
from .inference import BatchEngine, Hyperparams, ScheduleConfig
from .stats import GlobalStats

logger = logging.getLogger(__name__)


@dataclass
class OnlineState:
    stats: GlobalStats
    batches_seen: int = 0
    docs_seen: int = 0
    tokens_seen: float = 0.0
    iterations: list[int] = field(default_factory=list)

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations else 0.0


@dataclass
class BatchGradient:
    word_ids: np.ndarray
    delta: np.ndarray  # (n_words, K)
    prior: np.ndarray  # the same columns before this batch

    @property
    def total(self) -> float:
        return float(self.delta.sum())


@dataclass
class BatchMetrics:
    batch: int
    docs_seen: int
    iterations: int
    wall_time: float
    mean_residual: float
    vocab_size: int
    perplexity: float | None = None


def learning_rate(s: int) -> float:
    """Implicit step size ``1 / (s - 1)`` of batch ``s``.

    Analysis helper only: accumulating raw statistics realizes this rate
    without ever rescaling.
    """
    if s < 2:
        raise ValueError("the learning rate is defined for s >= 2")
    return 1.0 / (s - 1)


def new_state(n_topics: int, stats: GlobalStats | None = None) -> OnlineState:
    return OnlineState(stats if stats is not None else GlobalStats(n_topics))


def process_batch(
    state: OnlineState,
    batch: SparseBatch,
    hyper: Hyperparams,
    schedule: ScheduleConfig,
    rng: np.random.Generator,
) -> tuple[OnlineState, BatchGradient | None, BatchMetrics]:
    """Fold one mini-batch into ``state`` (mutated and returned).

    The batch's words are fetched once, the active engine runs to its
    convergence test, and ``prior + gradient`` is written back once.
    """
    if batch.index != state.batches_seen + 1:
        raise ValueError(f"expected batch {state.batches_seen + 1}, got {batch.index}")
    start = time.perf_counter()
    stats = state.stats
    vocab_size = max(stats.vocab_size, batch.vocab_size, int(batch.word_ids[-1]) + 1 if batch.n_words else 0)
    stats.extend(vocab_size)
    state.batches_seen += 1
    if batch.nnz == 0:
        logger.warning("skipping batch %d with no nonzeros", batch.index)
        state.iterations.append(0)
        return state, None, BatchMetrics(batch.index, state.docs_seen, 0, 0.0, 0.0, vocab_size)

    prior = stats.get(batch.word_ids)
    engine = BatchEngine(batch, hyper, schedule, rng, vocab_size=vocab_size,
                         phi_prior=prior, totals_prior=stats.totals.copy())
    engine.run()
    delta = engine.gradient()
    residual = engine.mean_residual
    iters = engine.iterations
    del engine

    stats.accumulate(batch.word_ids, prior, delta)
    stats.flush()
    state.docs_seen += batch.doc_count
    state.tokens_seen += batch.token_count
    state.iterations.append(iters)
    metrics = BatchMetrics(batch.index, state.docs_seen, iters, time.perf_counter() - start, residual, vocab_size)
    return state, BatchGradient(batch.word_ids, delta, prior), metrics


def run_stream(
    batches: Iterable[SparseBatch],
    hyper: Hyperparams,
    schedule: ScheduleConfig,
    seed,
    stats: GlobalStats | None = None,
    callback: Callable[[OnlineState, BatchGradient | None, BatchMetrics], None] | None = None,
) -> OnlineState:
    """Run OBP over ``batches``; ``callback`` sees every processed batch."""
    rng = np.random.default_rng(seed)
    state = new_state(hyper.n_topics, stats)
    for batch in batches:
        state, grad, metrics = process_batch(state, batch, hyper, schedule, rng)
        logger.debug("batch %d: %d sweeps, residual %.4g", metrics.batch, metrics.iterations, metrics.mean_residual)
        if callback is not None:
            callback(state, grad, metrics)
    return state


# -- topic shifts ---------------------------------------------------------


@dataclass
class TopicShift:
    topic: int
    before: list[int]
    after: list[int]
    entered: list[int]
    exited: list[int]
    moved: dict[int, int]  # word -> rank change (positive = rose)

    @property
    def changed(self) -> bool:
        return bool(self.entered or self.exited or self.moved)


def _top_rows(values: np.ndarray, n: int, ids=None) -> list[int]:
    # Positive entries only, descending; lower word index wins ties.
    ids = np.arange(len(values)) if ids is None else np.asarray(ids)
    keep = values > 0
    values, ids = values[keep], ids[keep]
    order = np.lexsort((ids, -values))[:n]
    return [int(i) for i in ids[order]]


def _diff(k: int, top_b: list[int], top_a: list[int]) -> TopicShift:
    rank_b = {w: r for r, w in enumerate(top_b)}
    rank_a = {w: r for r, w in enumerate(top_a)}
    return TopicShift(
        topic=k,
        before=top_b,
        after=top_a,
        entered=[w for w in top_a if w not in rank_b],
        exited=[w for w in top_b if w not in rank_a],
        moved={w: rank_b[w] - rank_a[w] for w in top_a if w in rank_b and rank_b[w] != rank_a[w]},
    )


def topic_shift_report(delta: BatchGradient | np.ndarray, prior_stats: np.ndarray, top_n: int = 10,
                       word_ids=None) -> list[TopicShift]:
    """Per-topic top words before and after one batch's gradient.

    ``prior_stats`` is the full ``(W, K)`` statistic matrix before the batch;
    words the batch adds beyond ``W`` start from zero. ``delta`` is either a
    :class:`BatchGradient` or an array of rows (all words, or ``word_ids``).
    Only words with positive weight are ranked.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    before = np.asarray(prior_stats, dtype=np.float64)
    if isinstance(delta, BatchGradient):
        word_ids, delta = delta.word_ids, delta.delta
    rows = delta.shape[0] if word_ids is None else int(np.max(word_ids, initial=-1)) + 1
    if rows > before.shape[0]:
        before = np.vstack((before, np.zeros((rows - before.shape[0], before.shape[1]))))
    after = before.copy()
    if word_ids is None:
        after[: delta.shape[0]] += delta
    else:
        after[np.asarray(word_ids)] += delta
    return [_diff(k, _top_rows(before[:, k], top_n), _top_rows(after[:, k], top_n))
            for k in range(before.shape[1])]


class TopWordTracker:
    """Per-topic top words maintained across batches without full scans.

    Gradients are non-negative, so after a batch the new top list of a
    topic is found among its previous top words and the batch's words.
    Only words with positive weight are ranked. Produces the same reports
    as :func:`topic_shift_report` on the full matrix.
    """

    def __init__(self, n_topics: int, top_n: int = 10, stats=None):
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        self.top_n = top_n
        self.ids = [np.empty(0, dtype=np.int64) for _ in range(n_topics)]
        self.vals = [np.empty(0) for _ in range(n_topics)]
        if stats is not None and len(stats):
            for k in range(n_topics):
                top = _top_rows(stats[:, k], top_n)
                self.ids[k] = np.array(top, dtype=np.int64)
                self.vals[k] = stats[top, k].astype(np.float64)

    def update(self, grad: BatchGradient) -> list[TopicShift]:
        after_cols = grad.prior + grad.delta
        if np.any(grad.delta < 0):
            raise ValueError("the tracker needs non-negative gradients")
        report = []
        for k in range(len(self.ids)):
            old_ids, old_vals = self.ids[k], self.vals[k]
            stale = ~np.isin(old_ids, grad.word_ids)
            ids = np.concatenate((old_ids[stale], grad.word_ids))
            vals = np.concatenate((old_vals[stale], after_cols[:, k]))
            top = _top_rows(vals, self.top_n, ids)
            where = {w: i for i, w in enumerate(ids.tolist())}
            self.ids[k] = np.array(top, dtype=np.int64)
            self.vals[k] = vals[[where[w] for w in top]]
            report.append(_diff(k, [int(w) for w in old_ids], top))
        return report


def iter_shift_rows(report: list[TopicShift], batch: int, token=str) -> Iterator[tuple]:
    for shift in report:
        for w in shift.entered:
            yield batch, shift.topic, "entered", token(w), shift.after.index(w) + 1
        for w in shift.exited:
            yield batch, shift.topic, "exited", token(w), shift.before.index(w) + 1
        for w, change in shift.moved.items():
            yield batch, shift.topic, "moved", token(w), change


METRIC_FIELDS = ("batch", "docs_seen", "iterations", "mean_residual", "vocab_size", "perplexity")


def write_metrics(rows: Iterable[BatchMetrics], fh, include_time: bool = False) -> None:
    fields = METRIC_FIELDS + (("wall_time",) if include_time else ())
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(fields)
    for m in rows:
        writer.writerow([
            m.batch, m.docs_seen, m.iterations, repr(m.mean_residual), m.vocab_size,
            "" if m.perplexity is None else repr(m.perplexity),
        ] + ([f"{m.wall_time:.6f}"] if include_time else []))
