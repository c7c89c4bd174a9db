"""Few-shot clinical prediction with a predictor/critic LLM agent loop.

The package turns coded patient visits into natural-language narratives,
builds multi-strategy prompts, runs a predictor agent over them, has a
critic agent study the mispredictions, consolidates the critic's feedback
into standing instructions, and re-prompts with those instructions.
Classical from-scratch baselines, imbalance-aware metrics, a synthetic
data generator, and a deterministic mock backend make the whole pipeline
runnable and testable offline.
"""

from .core import (
    CALIBRATION,
    LABELS,
    NEGATIVE,
    POSITIVE,
    SPLITS,
    TEST,
    TRAIN,
    CodeCategory,
    CodingSystem,
    CohortExample,
    ConsolidatedInstructions,
    ErrorBatch,
    ErrorCase,
    FeedbackSet,
    MedicalCode,
    Narrative,
    PredictionRecord,
    ValidationReport,
    Visit,
    label_for_probability,
    validate_cohort,
)
from .errors import (
    BackendError,
    CoAgentError,
    CohortError,
    ConfigError,
    EvalError,
    FormatError,
    MockScriptMissError,
    PromptError,
    ProtocolError,
    RunAbortedError,
    SynthError,
    TrainingError,
    TransientBackendError,
    VocabError,
)

__version__ = "0.1.0"

__all__ = [
    "CALIBRATION",
    "LABELS",
    "NEGATIVE",
    "POSITIVE",
    "SPLITS",
    "TEST",
    "TRAIN",
    "BackendError",
    "CoAgentError",
    "CodeCategory",
    "CodingSystem",
    "CohortError",
    "CohortExample",
    "ConfigError",
    "ConsolidatedInstructions",
    "ErrorBatch",
    "ErrorCase",
    "EvalError",
    "FeedbackSet",
    "FormatError",
    "MedicalCode",
    "MockScriptMissError",
    "Narrative",
    "PredictionRecord",
    "PromptError",
    "ProtocolError",
    "RunAbortedError",
    "SynthError",
    "TrainingError",
    "TransientBackendError",
    "ValidationReport",
    "Visit",
    "VocabError",
    "label_for_probability",
    "validate_cohort",
    "__version__",
]
