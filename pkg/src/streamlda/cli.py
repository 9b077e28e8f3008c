"""Command-line driver: ``streamlda {train,eval,topics,shift-report,store-inspect}``.

``train`` writes into ``--out``:

``metrics.csv``      per-batch sweeps, residual, vocabulary size, perplexity
``timing.csv``       per-batch wall time (not reproducible, kept apart)
``perplexity.csv``   held-out perplexity at each evaluation point
``topics.tsv``       top words of every topic
``shifts.tsv``       top-word changes caused by each batch
``model.json``       hyperparameters and where the statistics live
``phi_hat.npy``      ``(W, K)`` statistics (unless a model store is used)
``vocab.txt``        vocabulary (text input only)
``manifest.json``    everything needed to replay the run

Replaying ``train --manifest OLD/manifest.json --out NEW`` rewrites every
artifact except ``timing.csv`` byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .corpus import (
    VocabularyMap,
    batches_from_csr,
    holdout_rows,
    iter_text_documents,
    read_docword,
    split_train_test,
    stream_batches,
)
from .eval import predictive_perplexity, write_perplexity_csv, write_top_words_tsv
from .inference import Hyperparams, ScheduleConfig
from .modelstore import HEADER_SIZE, ColumnStore, StoreStats
from .online import TopWordTracker, iter_shift_rows, run_stream, topic_shift_report, write_metrics
from .stats import GlobalStats

logger = logging.getLogger("streamlda")

ALGORITHMS = {"bp": "synchronous", "rbp": "residual", "abp": "active", "obp": "active", "em": "em"}
# Settings recorded in the manifest; paths are stored as given.
CONFIG_KEYS = (
    "algorithm", "topics", "alpha", "beta", "batch_size", "topic_budget", "eta_w", "threshold",
    "max_iters", "cold_start_iters", "seed", "docword", "text", "vocab", "test_count", "eval_every",
    "model_store", "buffer_mb", "top_n",
)


class UsageError(Exception):
    pass


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _non_negative_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamlda", description="Streaming LDA by online belief propagation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write run artifacts")
    t.add_argument("--manifest", help="replay the configuration of an earlier run")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--algorithm", choices=sorted(ALGORITHMS))
    t.add_argument("--topics", type=_positive_int)
    t.add_argument("--alpha", type=_positive_float)
    t.add_argument("--beta", type=_positive_float)
    t.add_argument("--batch-size", type=_positive_int, help="documents per mini-batch (obp)")
    t.add_argument("--topic-budget", type=_positive_int)
    t.add_argument("--eta-w", type=float)
    t.add_argument("--threshold", type=_positive_float)
    t.add_argument("--max-iters", type=_positive_int)
    t.add_argument("--cold-start-iters", type=_positive_int)
    t.add_argument("--seed", type=int)
    src = t.add_mutually_exclusive_group()
    src.add_argument("--docword", help="UCI bag-of-words file")
    src.add_argument("--text", help="one document per line, whitespace tokens")
    t.add_argument("--vocab", help="vocabulary file, one token per line")
    t.add_argument("--test-count", type=_non_negative_int, help="documents held out for perplexity")
    t.add_argument("--eval-every", type=_positive_int, help="evaluate every N batches")
    t.add_argument("--model-store", help="keep statistics in this disk store")
    t.add_argument("--buffer-mb", type=float, help="column buffer size for the model store")
    t.add_argument("--top-n", type=_positive_int, help="words per topic in reports")

    e = sub.add_parser("eval", help="held-out perplexity of a trained model")
    e.add_argument("--model", required=True, help="training output directory")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--docword")
    src.add_argument("--text")
    e.add_argument("--protocol", choices=("full", "split"), default="full")
    e.add_argument("--seed", type=int, default=0, help="token split seed (split protocol)")

    tp = sub.add_parser("topics", help="print the top words of each topic")
    tp.add_argument("--model", required=True)
    tp.add_argument("--top-n", type=_positive_int, default=10)

    sr = sub.add_parser("shift-report", help="top-word changes between two models")
    sr.add_argument("--before", required=True, help="earlier training output directory")
    sr.add_argument("--after", required=True, help="later training output directory")
    sr.add_argument("--top-n", type=_positive_int, default=10)

    si = sub.add_parser("store-inspect", help="describe a model store file")
    si.add_argument("path")
    si.add_argument("--column", type=int, action="append", default=[], help="print this word's column")
    return p


DEFAULTS = dict(
    algorithm="obp", alpha=0.01, beta=0.01, batch_size=1024, topic_budget=30, eta_w=1.0,
    threshold=0.1, max_iters=50, cold_start_iters=20, test_count=0, eval_every=10, buffer_mb=64.0,
    top_n=10,
)


def resolve_config(args) -> dict:
    """Merge manifest, command-line flags and defaults; validate."""
    cfg = dict(DEFAULTS)
    if args.manifest:
        with open(args.manifest) as fh:
            cfg.update(json.load(fh)["config"])
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for key in CONFIG_KEYS:
        cfg.setdefault(key, None)
    if cfg["topics"] is None:
        raise UsageError("--topics is required")
    if cfg["seed"] is None:
        raise UsageError("--seed is required")
    if (cfg["docword"] is None) == (cfg["text"] is None):
        raise UsageError("exactly one of --docword or --text is required")
    if not 0 < cfg["eta_w"] <= 1:
        raise UsageError("--eta-w must lie in (0, 1]")
    if cfg["buffer_mb"] < 0:
        raise UsageError("--buffer-mb must be non-negative")
    if cfg["algorithm"] == "em" and (cfg["alpha"] < 1 or cfg["beta"] < 1):
        logger.warning("em with alpha or beta below 1 uses the smoothed normalization in the M-step")
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"streamlda": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _read_text_lines(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh]
    kept = [line for line in lines if line.split()]
    if len(kept) < len(lines):
        logger.warning("dropping %d empty documents", len(lines) - len(kept))
    return kept


def _text_to_csr(lines, vocab: VocabularyMap) -> sp.csr_matrix:
    """Count matrix of held-out text without growing ``vocab``.

    Unknown tokens get ids past the vocabulary, where every word has the
    same prior-only topic column.
    """
    unseen: dict[str, int] = {}
    rows, cols = [], []
    for d, line in enumerate(lines):
        for tok in line.lower().split():
            w = vocab.get(tok)
            if w is None:
                w = unseen.setdefault(tok, len(vocab) + len(unseen))
            rows.append(d)
            cols.append(w)
    x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(lines), len(vocab) + len(unseen)))
    x.sum_duplicates()
    return x


def _load_corpus(cfg):
    """``(train batches, test matrix or None, vocab or None)``."""
    vocab = VocabularyMap.from_file(cfg["vocab"]) if cfg["vocab"] else None
    schedule_whole = cfg["algorithm"] != "obp"
    if cfg["docword"]:
        _, x = read_docword(cfg["docword"])
        train, test, _ = split_train_test(x, cfg["test_count"], cfg["seed"])
        size = max(train.shape[0], 1) if schedule_whole else cfg["batch_size"]
        return batches_from_csr(train, size), (test if cfg["test_count"] else None), vocab, x.shape[1]
    lines = _read_text_lines(cfg["text"])
    vocab = vocab if vocab is not None else VocabularyMap()
    test_rows = holdout_rows(len(lines), cfg["test_count"], cfg["seed"])
    held = set(test_rows.tolist())
    train_lines = [line for i, line in enumerate(lines) if i not in held]
    test_lines = [lines[i] for i in test_rows] or None
    size = max(len(train_lines), 1) if schedule_whole else cfg["batch_size"]
    batches = stream_batches(iter_text_documents(train_lines, vocab), size, vocab)
    return batches, test_lines, vocab, None


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hyper = Hyperparams(cfg["topics"], cfg["alpha"], cfg["beta"])
    schedule = ScheduleConfig(kind=ALGORITHMS[cfg["algorithm"]], topic_budget=cfg["topic_budget"],
                              eta_w=cfg["eta_w"], threshold=cfg["threshold"], max_iters=cfg["max_iters"],
                              cold_start_iters=cfg["cold_start_iters"])
    inputs = {k: _sha256(cfg[k]) for k in ("docword", "text", "vocab") if cfg[k]}
    if args.manifest:
        with open(args.manifest) as fh:
            recorded = json.load(fh).get("inputs", {})
        changed = [k for k, digest in inputs.items() if recorded.get(k, digest) != digest]
        if changed:
            raise RuntimeError(f"input files differ from the manifest: {', '.join(changed)}")
    _write_json(out / "manifest.json", {"config": cfg, "inputs": inputs, "versions": _versions()})

    batches, test, vocab, base_w = _load_corpus(cfg)
    if cfg["model_store"]:
        if os.path.exists(cfg["model_store"]) and os.path.getsize(cfg["model_store"]) > HEADER_SIZE:
            raise RuntimeError(f"model store {cfg['model_store']} already holds statistics")
        stats = StoreStats.open(cfg["model_store"], hyper.n_topics,
                                buffer_bytes=int(cfg["buffer_mb"] * 2**20))
    else:
        stats = GlobalStats(hyper.n_topics)

    metrics, records, shift_rows = [], [], []
    tracker = TopWordTracker(hyper.n_topics, cfg["top_n"])
    token = vocab.token if vocab is not None else str
    def evaluate(state):
        if test is None:
            return None
        x = _text_to_csr(test, vocab) if isinstance(test, list) else test
        rec = predictive_perplexity(x, stats.to_array(), hyper, totals=stats.totals,
                                    vocab_size=stats.vocab_size, docs_seen=state.docs_seen)
        records.append(rec)
        return rec.perplexity

    def on_batch(state, grad, m):
        if grad is not None:
            shift_rows.extend(iter_shift_rows(tracker.update(grad), m.batch, token))
        if m.batch % cfg["eval_every"] == 0:
            m.perplexity = evaluate(state)
        metrics.append(m)
        logger.info("batch %d: %d docs, %d sweeps, residual %.4g%s", m.batch, m.docs_seen, m.iterations,
                    m.mean_residual, "" if m.perplexity is None else f", perplexity {m.perplexity:.4f}")

    state = run_stream(batches, hyper, schedule, cfg["seed"], stats=stats, callback=on_batch)
    if metrics and metrics[-1].perplexity is None:
        metrics[-1].perplexity = evaluate(state)
    if base_w is not None:
        stats.extend(base_w)

    with open(out / "metrics.csv", "w") as fh:
        write_metrics(metrics, fh)
    with open(out / "timing.csv", "w") as fh:
        fh.write("batch,wall_time\n")
        for m in metrics:
            fh.write(f"{m.batch},{m.wall_time:.6f}\n")
    with open(out / "perplexity.csv", "w") as fh:
        write_perplexity_csv(records, fh)
    with open(out / "shifts.tsv", "w") as fh:
        fh.write("batch\ttopic\tevent\ttoken\tvalue\n")
        for row in shift_rows:
            fh.write("\t".join(str(v) for v in row) + "\n")
    phi_hat = stats.to_array()
    with open(out / "topics.tsv", "w") as fh:
        write_top_words_tsv(phi_hat, vocab, fh, cfg["top_n"])
    model = {"topics": hyper.n_topics, "alpha": hyper.alpha, "beta": hyper.beta,
             "vocab_size": stats.vocab_size, "totals": [float(v) for v in stats.totals],
             "docs_seen": state.docs_seen, "batches": state.batches_seen}
    if cfg["model_store"]:
        model["store"] = cfg["model_store"]
        stats.close()
    else:
        np.save(out / "phi_hat.npy", phi_hat)
    if vocab is not None:
        model["vocab"] = "vocab.txt"
        with open(out / "vocab.txt", "w", encoding="utf-8") as fh:
            fh.writelines(tok + "\n" for tok in vocab.tokens())
    _write_json(out / "model.json", model)
    return 0


def load_model(model_dir):
    """``(hyper, phi_hat, totals, vocab or None)`` from a training output directory."""
    model_dir = Path(model_dir)
    with open(model_dir / "model.json") as fh:
        meta = json.load(fh)
    hyper = Hyperparams(meta["topics"], meta["alpha"], meta["beta"])
    if "store" in meta:
        with ColumnStore(meta["store"], hyper.n_topics, fsync=False) as store:
            phi_hat = store.read_all()
    else:
        phi_hat = np.load(model_dir / "phi_hat.npy")
    vocab = VocabularyMap.from_file(model_dir / meta["vocab"]) if "vocab" in meta else None
    return hyper, phi_hat, np.asarray(meta["totals"]), vocab


def cmd_eval(args) -> int:
    hyper, phi_hat, totals, vocab = load_model(args.model)
    if args.docword:
        _, test = read_docword(args.docword)
    else:
        if vocab is None:
            raise UsageError("--text needs a model trained on text (with a vocabulary)")
        test = _text_to_csr(_read_text_lines(args.text), vocab)
    with open(Path(args.model) / "model.json") as fh:
        docs_seen = json.load(fh)["docs_seen"]
    rec = predictive_perplexity(test, phi_hat, hyper, totals=totals, vocab_size=phi_hat.shape[0],
                                docs_seen=docs_seen, protocol=args.protocol, seed=args.seed)
    write_perplexity_csv([rec], sys.stdout)
    return 0


def cmd_topics(args) -> int:
    _, phi_hat, _, vocab = load_model(args.model)
    write_top_words_tsv(phi_hat, vocab, sys.stdout, args.top_n)
    return 0


def cmd_shift_report(args) -> int:
    h1, before, _, vocab = load_model(args.before)
    h2, after, _, vocab2 = load_model(args.after)
    if h1.n_topics != h2.n_topics:
        raise UsageError("models have different topic counts")
    if after.shape[0] < before.shape[0]:
        raise UsageError("--after has fewer words than --before")
    padded = np.zeros_like(after)
    padded[: before.shape[0]] = before
    report = topic_shift_report(after - padded, padded, args.top_n)
    token = (vocab2 or vocab).token if (vocab2 or vocab) is not None else str
    sys.stdout.write("topic\tevent\ttoken\tvalue\n")
    for row in iter_shift_rows(report, 0, token):
        sys.stdout.write("\t".join(str(v) for v in row[1:]) + "\n")
    return 0


def cmd_store_inspect(args) -> int:
    from .modelstore import HEADER, StoreFormatError

    with open(args.path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise StoreFormatError(f"{args.path}: truncated header")
    _, version, K, _, _ = HEADER.unpack(raw)
    with ColumnStore(args.path, K, fsync=False) as store:
        totals = store.scan_totals()
        print(f"path\t{args.path}")
        print(f"version\t{version}")
        print(f"topics\t{K}")
        print(f"words\t{store.vocab_size}")
        print(f"bytes\t{os.path.getsize(args.path)}")
        print(f"tokens\t{float(totals.sum())!r}")
        print("totals\t" + " ".join(repr(float(v)) for v in totals))
        for w in args.column:
            print(f"column {w}\t" + " ".join(repr(float(v)) for v in store.read_column(w)))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "topics": cmd_topics, "shift-report": cmd_shift_report,
            "store-inspect": cmd_store_inspect}


def main(argv=None) -> int:
    level = os.environ.get("STREAMLDA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad usage
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"streamlda: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
