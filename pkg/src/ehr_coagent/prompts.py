"""Prompt construction for the predictor, critic, and consolidation agents.

All three prompts are rendered from plain-text templates with named
placeholders.  The package ships default templates; callers may load
replacements from a directory to restyle the wording without touching code.
Prompt text is hashed (together with a template version tag) so downstream
caching can key on exact prompt bytes.
"""

from __future__ import annotations

import hashlib
import random
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .core import (
    POSITIVE,
    TRAIN,
    CohortExample,
    ConsolidatedInstructions,
    ErrorBatch,
    FeedbackSet,
    Narrative,
)
from .errors import PromptError

# Bumped whenever shipped template wording changes; folded into prompt hashes
# so stale cached responses are never replayed against reworded prompts.
TEMPLATE_VERSION = "1"

DEFAULT_TASK_DESCRIPTION = (
    "You are assisting with a clinical risk assessment. Given a narrative "
    "summary of one patient encounter, decide whether the patient will have "
    "a positive outcome for the target condition."
)

DEFAULT_ANSWER_FORMAT = (
    "Give a short reasoning section first. Then finish with one line "
    "containing exactly `Answer: Yes` or `Answer: No`."
)

PREVALENCE_CLAUSE = (
    "Base rate: about {prevalence_pct} of comparable patients have a "
    "positive outcome on this task. Keep this prevalence in mind; do not "
    "assume the classes are balanced."
)

FACTOR_INTERACTION_CLAUSE = (
    "Consider how the diagnoses, medications, and procedures relate to one "
    "another. Combinations of findings can carry more signal than any "
    "single item on its own."
)

COT_CLAUSE = (
    "Think through the record step by step and explain your reasoning "
    "before committing to the final answer."
)

INSTRUCTIONS_HEADER = (
    "Follow these standing instructions when assessing the record:"
)

EXEMPLARS_HEADER = "Here are solved example cases:"

YES = "Yes"
NO = "No"

_TEMPLATE_FILES = ("predictor.txt", "critic.txt", "consolidation.txt")

# Matches an emitted instruction line, tolerating list numbering and
# leading whitespace that models commonly add.
_INSTRUCTION_LINE = re.compile(r"^\s*(?:[-*]\s*)?(?:\d+[.)]\s*)?INSTRUCTION:\s*(.*\S)\s*$")


def word_for_label(label: str) -> str:
    """Render a label as the answer word used inside prompts."""
    return YES if label == POSITIVE else NO


@dataclass(frozen=True)
class PromptTemplates:
    """The three template strings used to render agent prompts."""

    predictor: str
    critic: str
    consolidation: str

    @classmethod
    def default(cls) -> "PromptTemplates":
        """Load the templates shipped inside the package."""
        return cls(
            predictor=_packaged("predictor.txt"),
            critic=_packaged("critic.txt"),
            consolidation=_packaged("consolidation.txt"),
        )

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptTemplates":
        """Load templates from a directory, falling back to the packaged
        default for any of the three files that is absent."""
        base = Path(path)
        texts = {}
        for name in _TEMPLATE_FILES:
            candidate = base / name
            if candidate.is_file():
                texts[name] = candidate.read_text(encoding="utf-8")
            else:
                texts[name] = _packaged(name)
        return cls(
            predictor=texts["predictor.txt"],
            critic=texts["critic.txt"],
            consolidation=texts["consolidation.txt"],
        )


def _packaged(name: str) -> str:
    ref = resources.files("ehr_coagent").joinpath(f"data/templates/{name}")
    return ref.read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptConfig:
    """Feature flags selecting which optional predictor-prompt parts appear.

    ``few_shot_n`` is the total number of exemplars the engine should sample
    (half positive, half negative), so it must be even.
    """

    use_cot: bool = False
    use_factor_interactions: bool = False
    use_prevalence: bool = False
    few_shot_n: int = 0
    instructions: ConsolidatedInstructions | None = None
    include_exemplar_reasoning: bool = False
    task_description: str = DEFAULT_TASK_DESCRIPTION
    answer_format_clause: str = DEFAULT_ANSWER_FORMAT

    def __post_init__(self) -> None:
        if self.few_shot_n < 0:
            raise PromptError(f"few_shot_n must be >= 0, got {self.few_shot_n}")
        if self.few_shot_n % 2 != 0:
            raise PromptError(
                f"few_shot_n must be even to balance classes, got {self.few_shot_n}"
            )
        if not self.task_description.strip():
            raise PromptError("task_description must be nonempty")
        if not self.answer_format_clause.strip():
            raise PromptError("answer_format_clause must be nonempty")


@dataclass(frozen=True)
class Exemplar:
    """A solved case shown to the predictor: narrative plus its true label."""

    narrative: Narrative
    label: str
    reasoning: str = ""


@dataclass(frozen=True)
class PromptText:
    """Rendered prompt plus a stable hash of its exact bytes."""

    text: str
    prompt_hash: str = field(default="")

    def __post_init__(self) -> None:
        if not self.text:
            raise PromptError("prompt text must be nonempty")
        if not self.prompt_hash:
            object.__setattr__(self, "prompt_hash", hash_prompt(self.text))


def hash_prompt(text: str) -> str:
    payload = f"template-v{TEMPLATE_VERSION}\n{text}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def sample_exemplars(
    train_examples: Sequence[CohortExample],
    narratives: Mapping[str, Narrative],
    n_positive: int,
    n_negative: int,
    seed: int,
) -> list[Exemplar]:
    """Draw a class-balanced exemplar list from training examples.

    Exemplars alternate positive/negative starting with a positive case, so
    the few-shot block never opens or closes with a run of one class.  Every
    example must carry the Train split tag; this is the leakage guard that
    keeps evaluation cases out of prompts.
    """
    bad_split = [ex.example_id for ex in train_examples if ex.split != TRAIN]
    if bad_split:
        raise PromptError(
            f"exemplars must come from the train split; offending ids: {bad_split[:5]}"
        )
    positives = [ex for ex in train_examples if ex.label == POSITIVE]
    negatives = [ex for ex in train_examples if ex.label != POSITIVE]
    if len(positives) < n_positive:
        raise PromptError(
            f"need {n_positive} positive exemplars, train split has {len(positives)}"
        )
    if len(negatives) < n_negative:
        raise PromptError(
            f"need {n_negative} negative exemplars, train split has {len(negatives)}"
        )
    rng = random.Random(seed)
    chosen_pos = rng.sample(positives, n_positive)
    chosen_neg = rng.sample(negatives, n_negative)

    ordered: list[CohortExample] = []
    for i in range(max(n_positive, n_negative)):
        if i < n_positive:
            ordered.append(chosen_pos[i])
        if i < n_negative:
            ordered.append(chosen_neg[i])

    exemplars = []
    for ex in ordered:
        narrative = narratives.get(ex.example_id)
        if narrative is None:
            raise PromptError(f"no narrative available for exemplar {ex.example_id!r}")
        exemplars.append(Exemplar(narrative=narrative, label=ex.label))
    return exemplars


def _strategy_clauses(config: PromptConfig, prevalence: float | None) -> str:
    parts = []
    if config.use_prevalence:
        if prevalence is None:
            raise PromptError("use_prevalence is set but no prevalence value was given")
        if not 0.0 <= prevalence <= 1.0:
            raise PromptError(f"prevalence must be within [0, 1], got {prevalence}")
        pct = f"{prevalence * 100.0:.1f}%"
        parts.append(PREVALENCE_CLAUSE.format(prevalence_pct=pct))
    if config.use_factor_interactions:
        parts.append(FACTOR_INTERACTION_CLAUSE)
    if config.use_cot:
        parts.append(COT_CLAUSE)
    return "".join(f"{clause}\n\n" for clause in parts)


def _instructions_block(instructions: ConsolidatedInstructions | None) -> str:
    if instructions is None:
        return ""
    lines = [INSTRUCTIONS_HEADER]
    for i, text in enumerate(instructions.instructions, start=1):
        lines.append(f"{i}. {text}")
    return "\n".join(lines) + "\n\n"


def _exemplars_block(exemplars: Sequence[Exemplar], include_reasoning: bool) -> str:
    if not exemplars:
        return ""
    blocks = [EXEMPLARS_HEADER]
    for i, ex in enumerate(exemplars, start=1):
        lines = [f"Example {i}:", ex.narrative.text]
        if include_reasoning and ex.reasoning:
            lines.append(f"Reasoning: {ex.reasoning}")
        lines.append(f"Answer: {word_for_label(ex.label)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n\n"


def build_predictor_prompt(
    narrative: Narrative,
    config: PromptConfig,
    exemplars: Sequence[Exemplar] = (),
    prevalence: float | None = None,
    templates: PromptTemplates | None = None,
) -> PromptText:
    """Render the predictor prompt for one query narrative.

    Sections appear in a fixed order: task description, optional strategy
    clauses (prevalence, factor interactions, chain of thought), optional
    standing instructions, optional exemplars, the query record, and the
    answer-format clause.  Each optional part renders as one contiguous
    chunk, so enabling a single flag inserts text without reflowing the rest
    of the prompt.
    """
    tpl = templates or PromptTemplates.default()
    text = tpl.predictor.format(
        task_description=config.task_description,
        strategy_clauses=_strategy_clauses(config, prevalence),
        instructions=_instructions_block(config.instructions),
        exemplars=_exemplars_block(exemplars, config.include_exemplar_reasoning),
        narrative=narrative.text,
        answer_format=config.answer_format_clause,
    )
    return PromptText(text=text.strip("\n") + "\n")


def build_critic_prompt(
    batch: ErrorBatch,
    task_description: str = DEFAULT_TASK_DESCRIPTION,
    templates: PromptTemplates | None = None,
) -> PromptText:
    """Render the critic prompt over one batch of mispredicted cases."""
    if not batch.items:
        raise PromptError("critic prompt needs at least one error case")
    tpl = templates or PromptTemplates.default()
    blocks = []
    for i, case in enumerate(batch.items, start=1):
        reasoning = case.prediction.reasoning.strip() or "(no reasoning provided)"
        blocks.append(
            "\n".join(
                [
                    f"Case {i}:",
                    f"Record: {case.narrative.text}",
                    f"Predicted answer: {word_for_label(case.prediction.predicted_label)}",
                    f"Stated reasoning: {reasoning}",
                    f"Correct answer: {word_for_label(case.true_label)}",
                ]
            )
        )
    text = tpl.critic.format(
        task_description=task_description,
        cases="\n\n".join(blocks),
    )
    return PromptText(text=text.strip("\n") + "\n")


def build_consolidation_prompt(
    feedback_sets: Sequence[FeedbackSet],
    max_instructions: int = 8,
    templates: PromptTemplates | None = None,
) -> PromptText:
    """Render the prompt that merges per-batch critic feedback."""
    if not feedback_sets:
        raise PromptError("consolidation prompt needs at least one feedback set")
    if max_instructions < 1:
        raise PromptError(f"max_instructions must be >= 1, got {max_instructions}")
    tpl = templates or PromptTemplates.default()
    blocks = []
    for fb in feedback_sets:
        lines = [f"Batch {fb.batch_id} feedback:"]
        if fb.instructions:
            lines.extend(f"INSTRUCTION: {text}" for text in fb.instructions)
        else:
            lines.append("(no feedback produced for this batch)")
        blocks.append("\n".join(lines))
    text = tpl.consolidation.format(
        feedback_sets="\n\n".join(blocks),
        max_instructions=max_instructions,
    )
    return PromptText(text=text.strip("\n") + "\n")


def parse_instruction_lines(text: str) -> list[str]:
    """Extract ``INSTRUCTION:`` payloads from a model response, one per line."""
    found = []
    for line in text.splitlines():
        match = _INSTRUCTION_LINE.match(line)
        if match:
            found.append(match.group(1))
    return found
