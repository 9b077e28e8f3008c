"""Streaming LDA by online belief propagation."""
from .corpus import (
    CorpusFormatError,
    CorpusHeader,
    SparseBatch,
    VocabularyMap,
    batches_from_csr,
    iter_text_documents,
    parse_bag_of_words,
    read_docword,
    split_train_test,
    stream_batches,
)
from .eval import PerplexityRecord, fold_in, predictive_perplexity, top_words, training_perplexity
from .inference import (
    BatchEngine,
    Hyperparams,
    ScheduleConfig,
    check_convergence,
    em_estep,
    em_mstep,
    estimate_parameters,
    lower_bound,
    run_batch,
    select_active_topics,
)
from .modelstore import BufferCache, ColumnStore, StoreStats, open_store
from .online import OnlineState, learning_rate, process_batch, run_stream, topic_shift_report
from .stats import GlobalStats

__version__ = "0.1.0"
