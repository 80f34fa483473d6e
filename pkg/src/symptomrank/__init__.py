"""symptomrank: rank sentences by relevance to BDI-II depression symptoms.

Pipeline stages: TREC corpus preparation and deduplication, label mapping
and stratified splitting, embedding-based max-cosine scoring with threshold
calibration, LLM relevance grading, ensemble run construction, and
classification / IR evaluation.
"""

from symptomrank.corpus import (
    SentenceRecord,
    Symptom,
    dedup_with_reconciliation,
    load_default_questionnaire,
    load_questionnaire,
    normalize_text,
    parse_trec_corpus,
)
from symptomrank.dataset import (
    LabeledInstance,
    SplitAssignment,
    binarize,
    map_labels,
    merge_synthetic,
    stratified_split,
)
from symptomrank.evaluation import (
    Qrels,
    average_precision,
    evaluate_classification,
    evaluate_ir,
    f1,
    ndcg_at_k,
    precision_at_k,
    r_precision,
)
from symptomrank.oracle import (
    MockBackend,
    PromptSpec,
    build_relevance_prompt,
    build_synthesis_prompt,
    parse_grade,
    parse_synthetic_sentences,
    request_relevance,
    select_exemplars,
)
from symptomrank.runs import (
    PositiveRule,
    Run,
    ScoreTable,
    build_positive_run,
    ensemble_max,
    ensemble_unanimity,
    filter_candidates,
    ingest_score_table,
    parse_run_file,
    select_aug_best,
    write_run_file,
)
from symptomrank.similarity import (
    EmbeddingStore,
    calibrate_thresholds,
    cosine,
    load_embeddings,
    max_option_similarity,
    score_corpus,
)

__version__ = "0.1.0"
