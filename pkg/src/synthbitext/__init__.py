"""Synthetic parallel corpus generation and translation evaluation toolkit."""

from .corpus import (
    CorpusStats,
    DatasetError,
    MCQAEntry,
    ParallelPair,
    SAEntry,
    compute_corpus_stats,
    drop_choice_counts,
    load_dataset,
    q3_length_filter,
    save_dataset,
)
from .metrics import (
    ClassificationScores,
    EmbeddingVector,
    TokenSequence,
    chrf_pp,
    classification_metrics,
    corpus_bleu,
    corpus_chrf_pp,
    cosine_similarity,
    meteor,
    rouge_l,
    sentence_bleu,
    tokenize,
)
from .backends import (
    AuditLog,
    BackendClient,
    BackendEndpoint,
    HttpTransport,
    ProtocolError,
    TransportError,
    llm_rewrite,
)
from .prompts import (
    FslExampleBank,
    ResponseCountError,
    ResponseParseError,
    ResponseValueError,
    build_fsl_prompt,
    parse_fsl_response,
)
from .pipeline import (
    FilterDecision,
    Pipeline,
    PipelineConfig,
    PipelineReport,
    PipelineStageError,
    RoundTripRecord,
    RoundTripThresholds,
    back_translate,
    derive_similarity_threshold,
    filter_roundtrip,
    filter_similarity,
    render_flat_text,
    run_pipeline,
    split_flat_text,
)
from .evalharness import (
    EvalReport,
    EvalSuite,
    compare_to_gold,
    evaluate_mt,
    evaluate_task,
    macro_scores,
    tokenizer_fertility,
)

__version__ = "0.1.0"
