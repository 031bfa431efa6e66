"""Corpus-to-SFT toolchain: retrieve, generate, distill, gate, evaluate.

The pipeline turns a structured domain corpus into quality-filtered,
cognitively layered chat training samples, then measures model outputs with
overlap metrics and pairwise arena judging. Everything runs offline against
deterministic mock backends; real backends plug in through the gateway.
"""

from .ablation import AblationGrid, AblationResult, run_ablation, summarize_cells
from .corpus import (
    Chunk,
    ChunkPolicy,
    CoverageReport,
    Document,
    KnowledgeTree,
    assign_to_tree,
    count_tokens,
    coverage_report,
    ingest_document,
    normalize_terminology,
    segment,
)
from .evaluation import (
    ArenaConfig,
    MetricReport,
    WinRateReport,
    arena_judge,
    arena_run,
    bleu,
    bootstrap_ci,
    evaluate_pairs,
    extract_answer,
    micro_average,
    rouge_l_f,
    rouge_n_f,
    score_pair,
)
from .gateway import (
    ChatRequest,
    Completion,
    Gateway,
    GatewayConfig,
    Message,
    MockChatBackend,
    MockEmbeddingBackend,
    chat_request,
    mock_gateway,
    request_fingerprint,
)
from .generation import (
    CandidateSample,
    DistillConfig,
    MultiSourceContext,
    QuestionDraft,
    assemble_context,
    distill,
    generate_question,
    sample_qtype,
    to_sft_record,
)
from .indexing import (
    DenseIndex,
    RetrievalConfig,
    Retriever,
    ScoredCandidate,
    SparseIndex,
    bm25_score,
    build_dense_index,
    build_sparse_index,
    cosine,
    hybrid_retrieve,
    normalize_pool,
    tokenize,
)
from .quality import (
    DedupConfig,
    FilterResult,
    QualityReport,
    compute_composite,
    dedup_test_against_train,
    filter_samples,
    score_answer,
    score_sample,
    score_samples,
)
from .qtypes import DEFAULT_QTYPE_MIX, QUESTION_TYPES, QuestionType, get_question_type
from .seeds import derive_seed

__version__ = "0.1.0"
