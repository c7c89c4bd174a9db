"""Core data model for visit-level disease prediction.

Immutable value types shared by every stage of the pipeline: coded visits,
labeled cohort examples, narratives, predictions, and the feedback records
produced by the critic loop. Everything is a frozen dataclass, so instances
are hashable and safe to share across threads.

Labels and split names are plain strings (see POSITIVE/NEGATIVE and
TRAIN/CALIBRATION/TEST) rather than enums so that malformed values read
from disk stay representable and can be reported by `validate_cohort`
instead of blowing up at decode time.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

POSITIVE = "positive"
NEGATIVE = "negative"
LABELS = (POSITIVE, NEGATIVE)

TRAIN = "train"
CALIBRATION = "calibration"
TEST = "test"
SPLITS = (TRAIN, CALIBRATION, TEST)


class CodingSystem(str, Enum):
    """Supported clinical coding systems."""

    ICD9 = "ICD9"
    ICD10 = "ICD10"
    NDC = "NDC"
    CPT = "CPT"
    CCS = "CCS"
    OTHER = "OTHER"


class CodeCategory(str, Enum):
    """The three kinds of medical codes a visit can carry."""

    DIAGNOSIS = "diagnosis"
    MEDICATION = "medication"
    PROCEDURE = "procedure"


@dataclass(frozen=True, order=True)
class MedicalCode:
    """One coded clinical concept (a diagnosis, medication, or procedure)."""

    system: CodingSystem
    code: str
    category: CodeCategory

    def __post_init__(self):
        # Accept plain strings for convenience when decoding.
        if not isinstance(self.system, CodingSystem):
            object.__setattr__(self, "system", CodingSystem(self.system))
        if not isinstance(self.category, CodeCategory):
            object.__setattr__(self, "category", CodeCategory(self.category))
        if not self.code or not self.code.strip():
            raise ValueError("medical code must be a nonempty string")

    @property
    def sort_key(self) -> tuple[str, str, str]:
        return (self.system.value, self.code, self.category.value)


@dataclass(frozen=True)
class Visit:
    """A single patient encounter: an id, a date, and a set of codes.

    Codes are kept as a frozenset, so ingesting duplicated code rows yields
    the same visit as ingesting them once.
    """

    visit_id: str
    patient_id: str
    date: datetime.date
    codes: frozenset[MedicalCode] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.visit_id:
            raise ValueError("visit_id must be nonempty")
        if not self.patient_id:
            raise ValueError("patient_id must be nonempty")
        if not isinstance(self.date, datetime.date):
            raise ValueError(f"visit date must be a datetime.date, got {type(self.date).__name__}")
        if not isinstance(self.codes, frozenset):
            object.__setattr__(self, "codes", frozenset(self.codes))

    def codes_in_category(self, category: CodeCategory) -> list[MedicalCode]:
        """Codes of one category, in deterministic sorted order."""
        return sorted((c for c in self.codes if c.category == category), key=lambda c: c.sort_key)

    def sorted_codes(self) -> list[MedicalCode]:
        return sorted(self.codes, key=lambda c: c.sort_key)

    def contains_any(self, targets: Iterable[MedicalCode]) -> bool:
        return not self.codes.isdisjoint(targets)


@dataclass(frozen=True)
class CohortExample:
    """One labeled prediction instance: an input visit plus a binary label."""

    example_id: str
    patient_id: str
    input_visit: Visit
    label: str
    split: str = TRAIN
    task_id: str = ""


@dataclass(frozen=True)
class Narrative:
    """Natural-language rendering of one visit, keyed by example id."""

    example_id: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("narrative text must be nonempty")


def label_for_probability(p_positive: float) -> str:
    """Default decision rule: positive at or above 0.5 (ties break positive)."""
    return POSITIVE if p_positive >= 0.5 else NEGATIVE


@dataclass(frozen=True)
class PredictionRecord:
    """Predictor output for one example.

    `extraction_mode`, `attempts`, and `failed` record how the answer was
    obtained; they ride along in the serialized form so runs are auditable.
    """

    example_id: str
    predicted_label: str
    p_positive: float
    reasoning: str = ""
    prompt_hash: str = ""
    raw_response: str = ""
    extraction_mode: str = "text_only"
    attempts: int = 1
    failed: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_positive <= 1.0:
            raise ValueError(f"p_positive must be in [0, 1], got {self.p_positive}")


@dataclass(frozen=True)
class ErrorCase:
    """One mispredicted example as shown to the critic: the input narrative,
    the prediction made on it, and the ground-truth label."""

    narrative: Narrative
    prediction: PredictionRecord
    true_label: str


@dataclass(frozen=True)
class ErrorBatch:
    """A batch of wrong predictions sampled for one critic call."""

    batch_id: int
    items: tuple[ErrorCase, ...]

    def __post_init__(self):
        if not isinstance(self.items, tuple):
            object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise ValueError("error batch must contain at least one item")
        for item in self.items:
            if item.prediction.predicted_label == item.true_label:
                raise ValueError(
                    f"example {item.prediction.example_id} was predicted correctly; "
                    "error batches may only contain mispredictions"
                )


@dataclass(frozen=True)
class FeedbackSet:
    """Instructions the critic produced for one error batch.

    May be empty: a critic response with no parseable instructions is
    recorded as an empty set (with a warning) rather than dropped.
    """

    batch_id: int
    instructions: tuple[str, ...]

    def __post_init__(self):
        if not isinstance(self.instructions, tuple):
            object.__setattr__(self, "instructions", tuple(self.instructions))
        for text in self.instructions:
            if not text or not text.strip():
                raise ValueError("feedback instructions must be nonempty strings")


@dataclass(frozen=True)
class ConsolidatedInstructions:
    """The merged instruction set appended to predictor prompts."""

    instructions: tuple[str, ...]
    source_batch_ids: tuple[int, ...]
    round: int = 1

    def __post_init__(self):
        if not isinstance(self.instructions, tuple):
            object.__setattr__(self, "instructions", tuple(self.instructions))
        if not isinstance(self.source_batch_ids, tuple):
            object.__setattr__(self, "source_batch_ids", tuple(self.source_batch_ids))
        if not self.instructions:
            raise ValueError("consolidated instructions must be nonempty")
        if not self.source_batch_ids:
            raise ValueError("source_batch_ids must be nonempty")
        if self.round < 1:
            raise ValueError("round must be >= 1")
        for text in self.instructions:
            if not text or not text.strip():
                raise ValueError("instructions must be nonempty strings")


@dataclass
class ValidationReport:
    """Outcome of `validate_cohort`: hard errors and advisory warnings."""

    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors


def validate_cohort(examples: list[CohortExample]) -> ValidationReport:
    """Check a cohort for duplicate ids and malformed labels.

    Empty code sets are flagged as warnings, not errors: real extracts
    contain code-free visits and downstream narration handles them.
    """
    report = ValidationReport()
    seen: set[str] = set()
    for ex in examples:
        if ex.example_id in seen:
            report.errors.append(f"duplicate example_id {ex.example_id!r}")
        seen.add(ex.example_id)
        if ex.label not in LABELS:
            report.errors.append(f"example {ex.example_id!r} has out-of-range label {ex.label!r}")
        if not ex.input_visit.codes:
            report.warnings.append(f"example {ex.example_id!r} has a visit with no recorded codes")
    return report
