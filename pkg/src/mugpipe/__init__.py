"""Forensic mugshot pipeline toolkit.

Scores machine-generated physical descriptions against ground-truth
records, denoises images by total-variation minimization, builds
generation and aging prompts, and evaluates identity preservation of
augmented images — with all deep models behind a pluggable gateway.
"""

from .attributes import (
    CATEGORY_ORDER,
    AttributeDescription,
    AttributeValue,
    Category,
    Provenance,
    SubjectRecord,
    SynonymTable,
    default_synonym_table,
    load_subject_records,
    normalize_numeric_value,
    normalize_string_value,
    normalize_value,
)
from .config import GenerationArm, PipelineConfig, load_config
from .errors import (
    ConfigError,
    EvaluationError,
    GatewayError,
    IngestionError,
    MugpipeError,
    PromptError,
    ProtocolError,
    ScoringError,
    UsageError,
    ValidationError,
)
from .gateway import (
    BackendEndpoint,
    BackendKind,
    EnhanceMethod,
    GenerationRequest,
    ModelGateway,
    RunJournal,
    fixture_digest,
)
from .metric import (
    DistanceReport,
    EquivalenceTable,
    NumericThresholds,
    category_distance,
    default_equivalence_table,
    numeric_distance,
    score_cohort,
    score_description,
    string_distance,
)
from .prompts import (
    AgeDirection,
    FeatureRules,
    PromptSpec,
    build_aging_prompt,
    build_generation_prompt,
    build_vlm_questions,
)
from .reid import (
    Aggregation,
    ConfusionMatrix,
    Embedding,
    Semantics,
    VerificationMetrics,
    build_confusion_matrix,
    cosine_similarity,
    euclidean_distance,
    identification_accuracy,
    threshold_sweep,
    verification_metrics,
)
from .tvdenoise import (
    DenoiseParams,
    GrayImage,
    RgbImage,
    denoise,
    denoise_rgb,
    denoise_with_trace,
    total_variation,
)

__version__ = "0.1.0"
