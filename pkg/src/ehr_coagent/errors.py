"""Exception hierarchy shared across the package."""


class CoAgentError(Exception):
    """Base class for all package errors."""


class FormatError(CoAgentError):
    """A file could not be parsed (bad header, malformed row, bad JSON)."""


class ConfigError(CoAgentError):
    """A run configuration is invalid or references missing paths."""


class CohortError(CoAgentError):
    """A cohort operation cannot satisfy its contract (quota, emptiness)."""


class VocabError(CoAgentError):
    """Vocabulary or phenotype map loading/lookup failure."""


class PromptError(CoAgentError):
    """Prompt construction precondition violated."""


class BackendError(CoAgentError):
    """A backend call failed permanently (after retries)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class TransientBackendError(CoAgentError):
    """A retryable backend failure (timeouts, 5xx, scripted failures)."""


class ProtocolError(CoAgentError):
    """The backend returned a payload we could not interpret."""


class MockScriptMissError(CoAgentError):
    """No mock rule matched a prompt and the script has no default."""


class RunAbortedError(CoAgentError):
    """Too many per-example failures; the run stopped with partial artifacts."""


class EvalError(CoAgentError):
    """Predictions and truth labels do not line up, or metrics are infeasible."""


class TrainingError(CoAgentError):
    """A baseline model cannot be trained on the given data."""


class SynthError(CoAgentError):
    """A synthetic-data specification is infeasible."""
