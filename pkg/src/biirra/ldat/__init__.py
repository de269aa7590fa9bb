"""Translation, noise filtering and rewriting of caption corpora."""

from .backends import BackendError, HttpChatBackend, MockTranslator, TranslatorBackend
from .pipeline import (
    CorpusFormatError,
    OutputRecord,
    PipelineReport,
    ScoredTranslation,
    SourceRecord,
    corpus_from_triplets,
    retarget_triplets,
    dumps_output,
    read_corpus,
    run_ldat,
    write_corpus,
    write_output,
    write_report,
)
from .prompts import render_rewrite_prompt, render_translation_prompt
from .scoring import (
    ConstantScorer,
    LexiconOverlapScorer,
    QualityScorer,
    default_threshold,
    noise_level,
    phi_histogram,
    split_by_threshold,
)

__all__ = [
    "BackendError", "ConstantScorer", "CorpusFormatError", "HttpChatBackend",
    "LexiconOverlapScorer", "MockTranslator", "OutputRecord", "PipelineReport",
    "QualityScorer", "ScoredTranslation", "SourceRecord", "TranslatorBackend", "corpus_from_triplets",
    "default_threshold", "dumps_output", "noise_level", "phi_histogram", "read_corpus",
    "render_rewrite_prompt", "render_translation_prompt", "retarget_triplets", "run_ldat",
    "split_by_threshold",
    "write_corpus", "write_output", "write_report",
]
