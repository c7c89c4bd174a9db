"""The predictor/critic loop: predict, critique, consolidate, re-prompt.

One round means: predict every calibration example with the current
instructions, collect the mispredicted cases into batches, have the critic
write feedback per batch, consolidate the feedback into at most K
instructions, and install those instructions into the next round's
predictor prompts.  After the final round the test split is predicted once
with the last instruction set.

Error batches are drawn from the labeled calibration split only; test
examples never reach the critic or consolidator, and exemplars come from
the train split only.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import (
    NEGATIVE,
    POSITIVE,
    CohortExample,
    ConsolidatedInstructions,
    ErrorBatch,
    ErrorCase,
    FeedbackSet,
    Narrative,
    PredictionRecord,
)
from .errors import ConfigError, PromptError, RunAbortedError
from .gateway import (
    FALLBACK,
    FALLBACK_EPSILON,
    Backend,
    BackendError,
    CompletionRequest,
    ResponseCache,
    RetryPolicy,
    complete,
    extract_answer,
)
from .io import (
    batch_to_dict,
    dumps_canonical,
    feedback_to_dict,
    instructions_to_dict,
    prediction_to_dict,
    save_json,
    save_jsonl,
)
from .metrics import MetricSet, evaluate, metricset_to_dict
from .prompts import (
    Exemplar,
    PromptConfig,
    PromptTemplates,
    build_consolidation_prompt,
    build_critic_prompt,
    build_predictor_prompt,
    parse_instruction_lines,
    sample_exemplars,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines one co-agent run."""

    predictor_model: str = "predictor"
    critic_model: str = "critic"
    consolidator_model: str = "consolidator"
    prompt_config: PromptConfig = field(default_factory=PromptConfig)
    batch_size_b: int = 8
    num_batches_m: int = 5
    rounds: int = 1
    seed: int = 0
    max_instructions_k: int = 8
    failure_ceiling: float = 0.05
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if self.batch_size_b < 1:
            raise ConfigError(f"batch_size_b must be >= 1, got {self.batch_size_b}")
        if self.num_batches_m < 1:
            raise ConfigError(f"num_batches_m must be >= 1, got {self.num_batches_m}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.max_instructions_k < 1:
            raise ConfigError(
                f"max_instructions_k must be >= 1, got {self.max_instructions_k}"
            )
        if not 0.0 <= self.failure_ceiling <= 1.0:
            raise ConfigError(
                f"failure_ceiling must be in [0, 1], got {self.failure_ceiling}"
            )


def run_config_to_dict(config: RunConfig) -> dict:
    pc = config.prompt_config
    return {
        "predictor_model": config.predictor_model,
        "critic_model": config.critic_model,
        "consolidator_model": config.consolidator_model,
        "prompt_config": {
            "use_cot": pc.use_cot,
            "use_factor_interactions": pc.use_factor_interactions,
            "use_prevalence": pc.use_prevalence,
            "few_shot_n": pc.few_shot_n,
            "include_exemplar_reasoning": pc.include_exemplar_reasoning,
            "task_description": pc.task_description,
            "answer_format_clause": pc.answer_format_clause,
        },
        "batch_size_b": config.batch_size_b,
        "num_batches_m": config.num_batches_m,
        "rounds": config.rounds,
        "seed": config.seed,
        "max_instructions_k": config.max_instructions_k,
        "failure_ceiling": config.failure_ceiling,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }


@dataclass
class AgentBackends:
    """Backends per agent role plus the shared cache and retry policy."""

    predictor: Backend
    critic: Backend
    consolidator: Backend
    cache: ResponseCache | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    sleep: object = time.sleep
    templates: PromptTemplates | None = None


@dataclass
class RoundArtifact:
    """Everything one round produced."""

    round: int
    calibration_predictions: list[PredictionRecord]
    error_batches: list[ErrorBatch]
    feedbacks: list[FeedbackSet]
    consolidated: ConsolidatedInstructions | None
    calibration_metrics: MetricSet


@dataclass
class RunResult:
    """Final test predictions plus per-round artifacts."""

    test_predictions: list[PredictionRecord]
    test_metrics: MetricSet
    rounds: list[RoundArtifact]
    final_instructions: ConsolidatedInstructions | None
    exemplar_ids: tuple[str, ...] = ()


def _truth_map(examples: Sequence[CohortExample]) -> dict[str, str]:
    return {ex.example_id: ex.label for ex in examples}


def run_predictor(
    examples: Sequence[CohortExample],
    narratives: Mapping[str, Narrative],
    config: RunConfig,
    backends: AgentBackends,
    exemplars: Sequence[Exemplar] = (),
    instructions: ConsolidatedInstructions | None = None,
    prevalence: float | None = None,
) -> list[PredictionRecord]:
    """Predict every example; output order matches input order.

    A backend that still fails after retries yields a failed record rather
    than killing the pass, but if more than ``config.failure_ceiling`` of
    the examples fail, the whole run aborts carrying the partial records.
    """
    missing = [ex.example_id for ex in examples if ex.example_id not in narratives]
    if missing:
        raise PromptError(f"no narrative for examples: {missing[:5]}")

    prompt_config = replace(config.prompt_config, instructions=instructions)
    records: list[PredictionRecord] = []
    failures = 0
    for ex in examples:
        prompt = build_predictor_prompt(
            narratives[ex.example_id],
            prompt_config,
            exemplars=exemplars,
            prevalence=prevalence,
            templates=backends.templates,
        )
        request = CompletionRequest(
            model_id=config.predictor_model,
            prompt=prompt,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
        )
        try:
            response = complete(
                backends.predictor,
                request,
                cache=backends.cache,
                policy=backends.retry,
                sleep=backends.sleep,
            )
        except BackendError as exc:
            logger.warning("predictor failed on %s: %s", ex.example_id, exc)
            failures += 1
            records.append(
                PredictionRecord(
                    example_id=ex.example_id,
                    predicted_label=NEGATIVE,
                    p_positive=0.5 - FALLBACK_EPSILON,
                    prompt_hash=prompt.prompt_hash,
                    extraction_mode=FALLBACK,
                    attempts=exc.attempts,
                    failed=True,
                )
            )
            continue
        answer = extract_answer(response)
        failed = answer.extraction_mode == FALLBACK
        failures += int(failed)
        records.append(
            PredictionRecord(
                example_id=ex.example_id,
                predicted_label=answer.label,
                p_positive=answer.p_positive,
                reasoning=answer.reasoning,
                prompt_hash=prompt.prompt_hash,
                raw_response=response.text,
                extraction_mode=answer.extraction_mode,
                attempts=response.attempts,
                failed=failed,
            )
        )

    if examples and failures / len(examples) > config.failure_ceiling:
        error = RunAbortedError(
            f"{failures}/{len(examples)} predictions failed, above the "
            f"{config.failure_ceiling:.0%} ceiling"
        )
        error.partial_records = records
        raise error
    return records


def sample_error_batches(
    records: Sequence[PredictionRecord],
    truth: Mapping[str, str],
    narratives: Mapping[str, Narrative],
    b: int,
    m: int,
    seed: int | str,
) -> list[ErrorBatch]:
    """Partition the wrong predictions into at most m batches of size b.

    The wrong set is shuffled once, seed-deterministically, then cut into
    consecutive chunks: members are drawn without replacement until the
    set is exhausted, so the batch count is min(m, ceil(|W| / b)) and only
    the final batch can be short.  No wrong predictions means no batches.
    Batch ids are 1-based within the call.
    """
    wrong = [r for r in records if truth[r.example_id] != r.predicted_label]
    if not wrong:
        return []
    if b > len(wrong):
        logger.warning(
            "batch size %d exceeds the %d available wrong predictions; "
            "emitting one short batch",
            b,
            len(wrong),
        )
    rng = random.Random(seed)
    rng.shuffle(wrong)
    batches = []
    for j in range(min(m, math.ceil(len(wrong) / b))):
        chunk = wrong[j * b : (j + 1) * b]
        items = tuple(
            ErrorCase(
                narrative=narratives[r.example_id],
                prediction=r,
                true_label=truth[r.example_id],
            )
            for r in chunk
        )
        batches.append(ErrorBatch(batch_id=j + 1, items=items))
    return batches


def _complete_instruction_call(
    backend: Backend,
    request: CompletionRequest,
    backends: AgentBackends,
    what: str,
) -> list[str]:
    """Call an instruction-emitting agent, retrying once on empty output.

    The retry bypasses the cache; replaying a cached empty response would
    make the retry a no-op by construction.
    """
    response = complete(
        backend, request, cache=backends.cache, policy=backends.retry, sleep=backends.sleep
    )
    instructions = parse_instruction_lines(response.text)
    if not instructions:
        logger.warning("%s returned no instructions; retrying once", what)
        response = complete(
            backend, request, cache=None, policy=backends.retry, sleep=backends.sleep
        )
        instructions = parse_instruction_lines(response.text)
        if not instructions:
            logger.warning("%s returned no instructions after retry", what)
    return instructions


def run_critic(
    batches: Sequence[ErrorBatch],
    config: RunConfig,
    backends: AgentBackends,
) -> list[FeedbackSet]:
    """One FeedbackSet per batch, in batch order."""
    if not batches:
        raise ConfigError("run_critic needs at least one batch")
    feedbacks = []
    for batch in batches:
        prompt = build_critic_prompt(
            batch,
            task_description=config.prompt_config.task_description,
            templates=backends.templates,
        )
        request = CompletionRequest(
            model_id=config.critic_model,
            prompt=prompt,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
        )
        instructions = _complete_instruction_call(
            backends.critic, request, backends, f"critic on batch {batch.batch_id}"
        )
        feedbacks.append(
            FeedbackSet(batch_id=batch.batch_id, instructions=tuple(instructions))
        )
    return feedbacks


def dedupe_instructions(lines: Sequence[str], limit: int) -> tuple[str, ...]:
    """Case-insensitive de-duplication preserving first occurrence, capped."""
    seen = set()
    kept = []
    for line in lines:
        key = line.strip().lower()
        if key and key not in seen:
            seen.add(key)
            kept.append(line.strip())
        if len(kept) == limit:
            break
    return tuple(kept)


def consolidate(
    feedbacks: Sequence[FeedbackSet],
    config: RunConfig,
    backends: AgentBackends,
    round_number: int,
) -> ConsolidatedInstructions | None:
    """Merge per-batch feedback into at most K instructions.

    Zero source instructions (every feedback set empty) skips the
    consolidator entirely and returns None; the round still records that
    consolidation was skipped.
    """
    total = sum(len(fb.instructions) for fb in feedbacks)
    if total == 0:
        logger.warning("round %d: no critic instructions to consolidate", round_number)
        return None
    prompt = build_consolidation_prompt(
        feedbacks,
        max_instructions=config.max_instructions_k,
        templates=backends.templates,
    )
    request = CompletionRequest(
        model_id=config.consolidator_model,
        prompt=prompt,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )
    lines = _complete_instruction_call(
        backends.consolidator, request, backends, "consolidator"
    )
    merged = dedupe_instructions(lines, config.max_instructions_k)
    if not merged:
        return None
    return ConsolidatedInstructions(
        instructions=merged,
        source_batch_ids=tuple(fb.batch_id for fb in feedbacks),
        round=round_number,
    )


def _train_prevalence(train: Sequence[CohortExample]) -> float:
    if not train:
        raise ConfigError("prevalence prompting needs a nonempty train split")
    return sum(1 for ex in train if ex.label == POSITIVE) / len(train)


def run_coagent(
    train: Sequence[CohortExample],
    calibration: Sequence[CohortExample],
    test: Sequence[CohortExample],
    config: RunConfig,
    backends: AgentBackends,
    narratives: Mapping[str, Narrative],
    prevalence: float | None = None,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Run the full loop and optionally persist artifacts as they appear.

    Per round: calibration predictions with the current instructions,
    error batches, critic feedback, consolidation; the consolidated
    instructions become the next round's standing policy.  A round with
    zero calibration errors short-circuits the remaining rounds.  The test
    split is predicted exactly once, after the last round.
    """
    if not calibration:
        raise ConfigError("calibration split must be nonempty")
    _check_disjoint(train, calibration, test)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_json(run_config_to_dict(config), out / "config")

    if config.prompt_config.use_prevalence and prevalence is None:
        prevalence = _train_prevalence(train)

    exemplars: Sequence[Exemplar] = ()
    exemplar_ids: tuple[str, ...] = ()
    if config.prompt_config.few_shot_n > 0:
        half = config.prompt_config.few_shot_n // 2
        pool = list(train)
        exemplars = sample_exemplars(pool, narratives, half, half, seed=config.seed)
        wanted = {ex.narrative.example_id for ex in exemplars}
        exemplar_ids = tuple(ex.example_id for ex in pool if ex.example_id in wanted)

    truth_cal = _truth_map(calibration)
    instructions: ConsolidatedInstructions | None = None
    artifacts: list[RoundArtifact] = []

    for round_number in range(1, config.rounds + 1):
        try:
            cal_records = run_predictor(
                calibration,
                narratives,
                config,
                backends,
                exemplars=exemplars,
                instructions=instructions,
                prevalence=prevalence,
            )
        except RunAbortedError as error:
            if out is not None:
                _persist_partial(out, round_number, error)
            raise
        cal_metrics = evaluate(cal_records, truth_cal)
        batches = sample_error_batches(
            cal_records,
            truth_cal,
            narratives,
            config.batch_size_b,
            config.num_batches_m,
            seed=f"{config.seed}:round{round_number}",
        )
        if batches:
            feedbacks = run_critic(batches, config, backends)
            consolidated = consolidate(feedbacks, config, backends, round_number)
        else:
            feedbacks = []
            consolidated = None
        artifact = RoundArtifact(
            round=round_number,
            calibration_predictions=cal_records,
            error_batches=batches,
            feedbacks=feedbacks,
            consolidated=consolidated,
            calibration_metrics=cal_metrics,
        )
        artifacts.append(artifact)
        if out is not None:
            _persist_round(out, artifact)
        if consolidated is not None:
            instructions = consolidated
        if not batches:
            logger.info("round %d: zero calibration errors; stopping early", round_number)
            break

    try:
        test_records = run_predictor(
            test,
            narratives,
            config,
            backends,
            exemplars=exemplars,
            instructions=instructions,
            prevalence=prevalence,
        )
    except RunAbortedError as error:
        if out is not None:
            _persist_partial(out, None, error)
        raise
    test_metrics = evaluate(test_records, _truth_map(test))

    result = RunResult(
        test_predictions=test_records,
        test_metrics=test_metrics,
        rounds=artifacts,
        final_instructions=instructions,
        exemplar_ids=exemplar_ids,
    )
    if out is not None:
        _persist_final(out, result)
    return result


def _check_disjoint(
    train: Sequence[CohortExample],
    calibration: Sequence[CohortExample],
    test: Sequence[CohortExample],
) -> None:
    train_ids = {ex.example_id for ex in train}
    cal_ids = {ex.example_id for ex in calibration}
    test_ids = {ex.example_id for ex in test}
    overlap = (train_ids & cal_ids) | (train_ids & test_ids) | (cal_ids & test_ids)
    if overlap:
        raise ConfigError(f"splits overlap on example ids: {sorted(overlap)[:5]}")


def _persist_round(out: Path, artifact: RoundArtifact) -> None:
    round_dir = out / f"round-{artifact.round}"
    round_dir.mkdir(parents=True, exist_ok=True)
    save_jsonl(artifact.calibration_predictions, round_dir / "predictions", prediction_to_dict)
    save_jsonl(artifact.error_batches, round_dir / "batches", batch_to_dict)
    save_jsonl(artifact.feedbacks, round_dir / "feedback", feedback_to_dict)
    consolidated = (
        instructions_to_dict(artifact.consolidated)
        if artifact.consolidated is not None
        else None
    )
    save_json({"consolidated": consolidated}, round_dir / "instructions")


def _persist_partial(out: Path, round_number: int | None, error: RunAbortedError) -> None:
    """Keep whatever predictions exist when a pass aborts."""
    records = getattr(error, "partial_records", [])
    if round_number is None:
        target = out / "test"
    else:
        target = out / f"round-{round_number}"
    target.mkdir(parents=True, exist_ok=True)
    save_jsonl(records, target / "predictions", prediction_to_dict)
    (out / "ABORTED").write_text(str(error) + "\n", encoding="utf-8")


def _persist_final(out: Path, result: RunResult) -> None:
    test_dir = out / "test"
    test_dir.mkdir(parents=True, exist_ok=True)
    save_jsonl(result.test_predictions, test_dir / "predictions", prediction_to_dict)
    payload = {
        "rounds": [
            {
                "round": artifact.round,
                "calibration": metricset_to_dict(artifact.calibration_metrics),
            }
            for artifact in result.rounds
        ],
        "test": metricset_to_dict(result.test_metrics),
    }
    save_json(payload, out / "metrics")


def leakage_report(
    rounds: Sequence[RoundArtifact],
    exemplar_ids: Sequence[str],
    test_examples: Sequence[CohortExample],
    narratives: Mapping[str, Narrative],
) -> list[str]:
    """Mechanical test-set-isolation check over a run's artifacts.

    Returns human-readable violations; an empty list means no test example
    id or narrative text reached exemplars, error batches, or (therefore)
    critic and consolidation prompts.
    """
    test_ids = {ex.example_id for ex in test_examples}
    test_texts = {
        narratives[ex.example_id].text for ex in test_examples if ex.example_id in narratives
    }
    violations = []
    for ex_id in exemplar_ids:
        if ex_id in test_ids:
            violations.append(f"test example {ex_id!r} used as exemplar")
    for artifact in rounds:
        for batch in artifact.error_batches:
            for case in batch.items:
                if case.prediction.example_id in test_ids:
                    violations.append(
                        f"test example {case.prediction.example_id!r} in round "
                        f"{artifact.round} batch {batch.batch_id}"
                    )
                if case.narrative.text in test_texts:
                    violations.append(
                        "test narrative text leaked into round "
                        f"{artifact.round} batch {batch.batch_id}"
                    )
    return violations


def manifest_for_run(config_payload: dict, seeds: dict, timestamps: dict) -> dict:
    """Run manifest; everything except ``timestamps`` must be reproducible."""
    canonical = dumps_canonical(config_payload)
    return {
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "config": config_payload,
        "seeds": seeds,
        "version": _package_version(),
        "timestamps": timestamps,
    }


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("ehr-coagent")
    except Exception:
        return "unknown"
