"""Cohort construction: two labeling recipes, stratified sampling, splitting.

Both recipes are pure functions of (inputs, seed). The adjacent-pairs
recipe turns each consecutive visit pair of a multi-visit patient into one
example (former visit is the input, latter visit's codes supply the label).
The index-encounter recipe applies three exclusion rules in a fixed order,
then labels patients by whether a target code occurs within the horizon
after their first qualifying visit.
"""

from __future__ import annotations

import datetime
import logging
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from .core import NEGATIVE, POSITIVE, CALIBRATION, TEST, TRAIN, CohortExample, MedicalCode, Visit
from .errors import CohortError

log = logging.getLogger(__name__)


class CohortMode(str, Enum):
    ADJACENT_PAIRS = "adjacent"
    INDEX_ENCOUNTER = "index"


@dataclass
class VisitStore:
    """All visits, grouped by patient and ordered by (date, visit_id)."""

    by_patient: dict[str, list[Visit]] = field(default_factory=dict)

    @classmethod
    def from_visits(cls, visits: Iterable[Visit]) -> "VisitStore":
        seen: set[str] = set()
        grouped: dict[str, list[Visit]] = {}
        for visit in visits:
            if visit.visit_id in seen:
                raise CohortError(f"duplicate visit_id {visit.visit_id!r}")
            seen.add(visit.visit_id)
            grouped.setdefault(visit.patient_id, []).append(visit)
        for patient_visits in grouped.values():
            patient_visits.sort(key=lambda v: (v.date, v.visit_id))
        return cls(by_patient=dict(sorted(grouped.items())))

    def patients(self) -> list[str]:
        return list(self.by_patient)

    def visits_for(self, patient_id: str) -> list[Visit]:
        return self.by_patient.get(patient_id, [])

    def all_visits(self) -> list[Visit]:
        return [v for visits in self.by_patient.values() for v in visits]

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_patient.values())


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of one cohort build."""

    mode: CohortMode
    target_codes: frozenset[MedicalCode]
    horizon_days: int = 365
    seed: int = 0
    task_id: str = ""

    def __post_init__(self):
        if not isinstance(self.mode, CohortMode):
            object.__setattr__(self, "mode", CohortMode(self.mode))
        if not isinstance(self.target_codes, frozenset):
            object.__setattr__(self, "target_codes", frozenset(self.target_codes))
        if not self.target_codes:
            raise CohortError("target_codes must be nonempty")
        if self.mode is CohortMode.INDEX_ENCOUNTER and self.horizon_days < 1:
            raise CohortError("horizon_days must be >= 1 for index-encounter cohorts")


def build_adjacent_pairs(store: VisitStore, spec: CohortSpec) -> list[CohortExample]:
    """One example per adjacent visit pair of each multi-visit patient.

    A patient with k >= 2 visits contributes exactly k-1 examples; single-visit
    patients contribute nothing. Example i uses visit i as the input and is
    positive iff visit i+1 carries any target code.
    """
    if spec.mode is not CohortMode.ADJACENT_PAIRS:
        raise CohortError(f"spec mode is {spec.mode.value!r}, expected adjacent")
    examples: list[CohortExample] = []
    for patient_id in store.patients():
        visits = store.visits_for(patient_id)
        if len(visits) < 2:
            continue
        for i in range(len(visits) - 1):
            label = POSITIVE if visits[i + 1].contains_any(spec.target_codes) else NEGATIVE
            examples.append(
                CohortExample(
                    example_id=f"{patient_id}:pair{i}",
                    patient_id=patient_id,
                    input_visit=visits[i],
                    label=label,
                    split=TRAIN,
                    task_id=spec.task_id,
                )
            )
    return examples


@dataclass
class ExclusionCounts:
    """How many patients each index-cohort rule removed."""

    no_qualifying_visit: int = 0
    fewer_than_two_visits: int = 0
    short_record_span: int = 0
    target_history: int = 0


def build_index_cohort(
    store: VisitStore,
    spec: CohortSpec,
    inclusion_codes: frozenset[MedicalCode] | set[MedicalCode],
    history_lookback_days: int | None = None,
    counts_out: ExclusionCounts | None = None,
) -> list[CohortExample]:
    """Index-encounter cohort with three ordered exclusion rules.

    Patients must have at least one visit carrying an inclusion code (the
    base condition); the earliest such visit is the index. Exclusions, in
    order: (1) fewer than two visits overall, (2) first-to-last visit span
    shorter than the horizon, (3) any target code dated at or before the
    index (configurable lookback; default scans all history). Survivors are
    positive iff a target code appears within horizon_days after the index.

    Positive inputs: the earliest visit within horizon_days of the first
    endpoint visit. Negative inputs: a seed-deterministic uniform choice
    among visits at least horizon_days before the patient's last visit
    (the last visit itself is never eligible).
    """
    if spec.mode is not CohortMode.INDEX_ENCOUNTER:
        raise CohortError(f"spec mode is {spec.mode.value!r}, expected index")
    if not inclusion_codes:
        raise CohortError("inclusion_codes must be nonempty")
    counts = counts_out if counts_out is not None else ExclusionCounts()
    examples: list[CohortExample] = []
    for patient_id in store.patients():
        visits = store.visits_for(patient_id)
        index_visit = next((v for v in visits if v.contains_any(inclusion_codes)), None)
        if index_visit is None:
            counts.no_qualifying_visit += 1
            continue
        if len(visits) < 2:
            counts.fewer_than_two_visits += 1
            continue
        span_days = (visits[-1].date - visits[0].date).days
        if span_days < spec.horizon_days:
            counts.short_record_span += 1
            continue
        history = [v for v in visits if v.date <= index_visit.date]
        if history_lookback_days is not None:
            earliest = index_visit.date - datetime.timedelta(days=history_lookback_days)
            history = [v for v in history if v.date >= earliest]
        if any(v.contains_any(spec.target_codes) for v in history):
            counts.target_history += 1
            continue

        endpoint = next(
            (
                v
                for v in visits
                if v.date > index_visit.date
                and (v.date - index_visit.date).days <= spec.horizon_days
                and v.contains_any(spec.target_codes)
            ),
            None,
        )
        if endpoint is not None:
            window = [v for v in visits if 0 <= (endpoint.date - v.date).days <= spec.horizon_days]
            input_visit = window[0]
            label = POSITIVE
        else:
            last = visits[-1]
            eligible = [v for v in visits if (last.date - v.date).days >= spec.horizon_days]
            if not eligible:
                # Unreachable after rule 2, kept as a guard.
                counts.short_record_span += 1
                continue
            rng = random.Random(f"{spec.seed}:{patient_id}")
            input_visit = rng.choice(eligible)
            label = NEGATIVE
        examples.append(
            CohortExample(
                example_id=f"{patient_id}:index",
                patient_id=patient_id,
                input_visit=input_visit,
                label=label,
                split=TRAIN,
                task_id=spec.task_id,
            )
        )
    if not examples:
        log.warning(
            "index cohort is empty: no_qualifying=%d fewer_than_two=%d short_span=%d history=%d",
            counts.no_qualifying_visit,
            counts.fewer_than_two_visits,
            counts.short_record_span,
            counts.target_history,
        )
    return examples


def _round_half_up(value: Fraction) -> int:
    """Round a nonnegative fraction half-up without float error."""
    return int(value + Fraction(1, 2))


def stratified_sample(examples: Sequence[CohortExample], n: int, seed: int) -> list[CohortExample]:
    """Draw n examples matching the pool's label prevalence.

    The positive quota is round-half-up(n * prevalence); selection within
    each class is a uniform seed-deterministic draw without replacement,
    and the combined sample is shuffled deterministically.
    """
    if n > len(examples):
        raise CohortError(f"sample size {n} exceeds pool size {len(examples)}")
    positives = [ex for ex in examples if ex.label == POSITIVE]
    negatives = [ex for ex in examples if ex.label != POSITIVE]
    quota_pos = _round_half_up(Fraction(n * len(positives), len(examples))) if examples else 0
    quota_neg = n - quota_pos
    if quota_pos > len(positives):
        raise CohortError(f"positive class has {len(positives)} members, quota is {quota_pos}")
    if quota_neg > len(negatives):
        raise CohortError(f"negative class has {len(negatives)} members, quota is {quota_neg}")
    rng = random.Random(seed)
    chosen = rng.sample(positives, quota_pos) + rng.sample(negatives, quota_neg)
    rng.shuffle(chosen)
    return chosen


def _largest_remainder_counts(total: int, fractions: Sequence[float]) -> list[int]:
    """Integer allocation of `total` proportional to `fractions` (sums exactly)."""
    exact = [total * f for f in fractions]
    counts = [int(e) for e in exact]
    remainders = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split_cohort(
    examples: Sequence[CohortExample],
    fractions: tuple[float, float, float],
    seed: int,
    group_by_patient: bool = False,
) -> tuple[list[CohortExample], list[CohortExample], list[CohortExample]]:
    """Partition a cohort into train/calibration/test, stratified by label.

    Counts per split and class follow largest-remainder allocation, so the
    partition is exhaustive and disjoint. With `group_by_patient`, all of a
    patient's examples land in the same split (greedy balance; stratification
    becomes approximate). Each returned example has its split field rewritten.
    """
    if len(fractions) != 3:
        raise CohortError("fractions must be a (train, calibration, test) triple")
    if any(f <= 0 for f in fractions):
        raise CohortError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CohortError(f"fractions must sum to 1, got {sum(fractions)!r}")

    rng = random.Random(seed)
    split_names = (TRAIN, CALIBRATION, TEST)
    buckets: tuple[list[CohortExample], ...] = ([], [], [])

    if group_by_patient:
        groups: dict[str, list[CohortExample]] = {}
        for ex in examples:
            groups.setdefault(ex.patient_id, []).append(ex)
        order = list(groups)
        rng.shuffle(order)
        total = len(examples)
        targets = [total * f for f in fractions]
        filled = [0, 0, 0]
        for patient_id in order:
            deficits = [(filled[i] + len(groups[patient_id])) / targets[i] for i in range(3)]
            dest = min(range(3), key=lambda i: (deficits[i], i))
            buckets[dest].extend(groups[patient_id])
            filled[dest] += len(groups[patient_id])
    else:
        for is_positive in (True, False):
            members = [ex for ex in examples if (ex.label == POSITIVE) == is_positive]
            counts = _largest_remainder_counts(len(members), fractions)
            shuffled = members[:]
            rng.shuffle(shuffled)
            start = 0
            for i, count in enumerate(counts):
                buckets[i].extend(shuffled[start : start + count])
                start += count

    out: list[list[CohortExample]] = []
    for name, bucket in zip(split_names, buckets):
        n_pos = sum(1 for ex in bucket if ex.label == POSITIVE)
        if n_pos == 0 or n_pos == len(bucket):
            raise CohortError(f"split {name!r} would receive zero examples of one class")
        bucket = bucket[:]
        rng.shuffle(bucket)
        out.append([replace(ex, split=name) for ex in bucket])
    return out[0], out[1], out[2]
