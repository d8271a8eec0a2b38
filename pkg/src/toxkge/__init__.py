"""Knowledge-graph embeddings for ecotoxicological effect prediction."""

from .effects import AggregatedSample, EffectRecord, ToxicityCategory, aggregate, categorize, filter_records
from .embed import ComplExEmbedding, ComplexEmbeddingTable, RandomProjection, TrainingConfig, score_complex
from .errors import (
    ConfigError,
    ConvergenceError,
    CoverageError,
    DomainError,
    GroupingError,
    LookupFailure,
    ParseError,
    QueryError,
    ToxKGEError,
    TrainingError,
    UnsupportedUnitError,
)
from .evaluation import EvaluationReport, ProtocolConfig, run_protocol
from .grouping import GroupFoldSplitter, TanimotoAgglomerativeClustering, cluster_chemicals, make_fold_plan, species_divisions
from .kg import KnowledgeGraph, Literal, PatternQuery, Triple, load_ntriples, match_pattern
from .svr import KernelSVR
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AggregatedSample", "EffectRecord", "ToxicityCategory", "aggregate", "categorize", "filter_records",
    "ComplExEmbedding", "ComplexEmbeddingTable", "RandomProjection", "TrainingConfig", "score_complex",
    "ConfigError", "ConvergenceError", "CoverageError", "DomainError", "GroupingError", "LookupFailure",
    "ParseError", "QueryError", "ToxKGEError", "TrainingError", "UnsupportedUnitError",
    "EvaluationReport", "ProtocolConfig", "run_protocol",
    "GroupFoldSplitter", "TanimotoAgglomerativeClustering", "cluster_chemicals", "make_fold_plan", "species_divisions",
    "KnowledgeGraph", "Literal", "PatternQuery", "Triple", "load_ntriples", "match_pattern",
    "KernelSVR", "SynthConfig", "generate",
]
