"""Synthetic visit/cohort generator with a planted code-level signal.

Generated data exists to exercise pipelines and baselines at desk scale.
Class labels are assigned by exact stratification, and a configurable set
of diagnosis codes is planted so that positives carry each signal code
with probability ``signal_strength`` and negatives with probability
``1 - signal_strength``.  Background codes never overlap the signal set,
so learnability is fully controlled by the plant.
"""

from __future__ import annotations

import datetime
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .cohort import VisitStore, _round_half_up
from .core import (
    NEGATIVE,
    POSITIVE,
    CodeCategory,
    CodingSystem,
    CohortExample,
    MedicalCode,
    Visit,
)
from .errors import SynthError
from .io import example_to_dict, save_json, save_jsonl, write_visits_csv
from .vocab import CodeNameMap, FallbackPolicy

_EPOCH = datetime.date(2020, 1, 6)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for one generated dataset."""

    n_patients: int
    visits_per_patient: tuple[int, int] = (1, 4)
    vocab_sizes: tuple[int, int, int] = (60, 40, 30)
    prevalence: float = 0.3
    signal_codes: int = 4
    signal_strength: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_patients < 2:
            raise SynthError(f"n_patients must be >= 2, got {self.n_patients}")
        lo, hi = self.visits_per_patient
        if not 1 <= lo <= hi:
            raise SynthError(f"bad visits_per_patient range: {self.visits_per_patient}")
        if any(size < 0 for size in self.vocab_sizes):
            raise SynthError(f"vocab sizes must be >= 0: {self.vocab_sizes}")
        if not 0.0 < self.prevalence < 1.0:
            raise SynthError(f"prevalence must be in (0, 1), got {self.prevalence}")
        if self.signal_codes < 1:
            raise SynthError(f"signal_codes must be >= 1, got {self.signal_codes}")
        if self.signal_codes > self.vocab_sizes[0]:
            raise SynthError(
                f"signal_codes ({self.signal_codes}) exceeds diagnosis vocab "
                f"size ({self.vocab_sizes[0]})"
            )
        if not 0.0 <= self.signal_strength <= 1.0:
            raise SynthError(
                f"signal_strength must be in [0, 1], got {self.signal_strength}"
            )


def synth_spec_from_dict(payload: dict) -> SynthSpec:
    try:
        return SynthSpec(
            n_patients=int(payload["n_patients"]),
            visits_per_patient=tuple(payload.get("visits_per_patient", (1, 4))),
            vocab_sizes=tuple(payload.get("vocab_sizes", (60, 40, 30))),
            prevalence=float(payload.get("prevalence", 0.3)),
            signal_codes=int(payload.get("signal_codes", 4)),
            signal_strength=float(payload.get("signal_strength", 0.9)),
            seed=int(payload.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SynthError(f"bad synthetic spec: {exc}") from exc


@dataclass(frozen=True)
class GeneratedData:
    """Everything one generation run produces."""

    store: VisitStore
    name_map: CodeNameMap
    cohort: list[CohortExample]
    signal_codes: tuple[MedicalCode, ...]
    manifest: dict


def _make_vocab(spec: SynthSpec) -> tuple[list[MedicalCode], list[MedicalCode], list[MedicalCode], CodeNameMap]:
    diagnoses = [
        MedicalCode(CodingSystem.OTHER, f"SYN-D-{i:03d}", CodeCategory.DIAGNOSIS)
        for i in range(spec.vocab_sizes[0])
    ]
    medications = [
        MedicalCode(CodingSystem.OTHER, f"SYN-M-{i:03d}", CodeCategory.MEDICATION)
        for i in range(spec.vocab_sizes[1])
    ]
    procedures = [
        MedicalCode(CodingSystem.OTHER, f"SYN-P-{i:03d}", CodeCategory.PROCEDURE)
        for i in range(spec.vocab_sizes[2])
    ]
    entries = {}
    for i, code in enumerate(diagnoses):
        entries[(code.system.value, code.code)] = f"synthetic condition {i}"
    for i, code in enumerate(medications):
        entries[(code.system.value, code.code)] = f"synthetic medication {i}"
    for i, code in enumerate(procedures):
        entries[(code.system.value, code.code)] = f"synthetic procedure {i}"
    name_map = CodeNameMap(entries=entries, fallback_policy=FallbackPolicy.RAW_CODE)
    return diagnoses, medications, procedures, name_map


def _background_codes(
    rng: random.Random,
    diag_pool: list[MedicalCode],
    med_pool: list[MedicalCode],
    proc_pool: list[MedicalCode],
) -> set[MedicalCode]:
    codes: set[MedicalCode] = set()
    if diag_pool:
        codes.update(rng.sample(diag_pool, min(len(diag_pool), rng.randint(1, 4))))
    if med_pool:
        codes.update(rng.sample(med_pool, min(len(med_pool), rng.randint(0, 3))))
    if proc_pool:
        codes.update(rng.sample(proc_pool, min(len(proc_pool), rng.randint(0, 2))))
    return codes


def generate(spec: SynthSpec) -> GeneratedData:
    """Produce a visit store, vocabulary, and exactly-stratified cohort.

    Deterministic under ``spec.seed``: the same spec always yields the same
    patients, visits, codes, and labels.
    """
    rng = random.Random(spec.seed)
    diagnoses, medications, procedures, name_map = _make_vocab(spec)
    signal = tuple(diagnoses[: spec.signal_codes])
    diag_background = diagnoses[spec.signal_codes :]

    n_pos = _round_half_up(Fraction(spec.prevalence).limit_denominator(10**9) * spec.n_patients)
    if n_pos == 0 or n_pos == spec.n_patients:
        raise SynthError(
            f"infeasible spec: prevalence {spec.prevalence} with "
            f"{spec.n_patients} patients leaves a single class"
        )
    labels = [POSITIVE] * n_pos + [NEGATIVE] * (spec.n_patients - n_pos)
    rng.shuffle(labels)

    all_visits: list[Visit] = []
    cohort: list[CohortExample] = []
    lo, hi = spec.visits_per_patient
    for index in range(spec.n_patients):
        patient_id = f"SP{index:05d}"
        label = labels[index]
        n_visits = rng.randint(lo, hi)
        date = _EPOCH + datetime.timedelta(days=rng.randint(0, 364))
        visits = []
        for j in range(n_visits):
            codes = _background_codes(rng, diag_background, medications, procedures)
            if j == n_visits - 1:
                # The plant: signal codes enter only the input (last) visit.
                carry_p = (
                    spec.signal_strength if label == POSITIVE else 1.0 - spec.signal_strength
                )
                for code in signal:
                    if rng.random() < carry_p:
                        codes.add(code)
            visits.append(
                Visit(
                    visit_id=f"{patient_id}-v{j}",
                    patient_id=patient_id,
                    date=date,
                    codes=frozenset(codes),
                )
            )
            date = date + datetime.timedelta(days=rng.randint(20, 90))
        all_visits.extend(visits)
        cohort.append(
            CohortExample(
                example_id=f"{patient_id}:synth",
                patient_id=patient_id,
                input_visit=visits[-1],
                label=label,
                task_id="synthetic-planted-signal",
            )
        )

    store = VisitStore.from_visits(all_visits)
    manifest = {
        "spec": {
            "n_patients": spec.n_patients,
            "visits_per_patient": list(spec.visits_per_patient),
            "vocab_sizes": list(spec.vocab_sizes),
            "prevalence": spec.prevalence,
            "signal_codes": spec.signal_codes,
            "signal_strength": spec.signal_strength,
            "seed": spec.seed,
        },
        "n_positive": n_pos,
        "n_negative": spec.n_patients - n_pos,
        "signal_codes": [f"{c.system.value}:{c.code}" for c in signal],
    }
    return GeneratedData(
        store=store,
        name_map=name_map,
        cohort=cohort,
        signal_codes=signal,
        manifest=manifest,
    )


def write_generated(data: GeneratedData, out_dir: str | Path) -> dict[str, Path]:
    """Write visits CSV, vocabulary TSV, cohort JSONL, and signal manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "visits": out / "visits.csv",
        "vocab": out / "vocab.tsv",
        "cohort": out / "cohort.jsonl",
        "manifest": out / "signal_manifest.json",
    }
    write_visits_csv(data.store.all_visits(), paths["visits"])
    lines = [
        f"{system}\t{code}\t{name}"
        for (system, code), name in sorted(data.name_map.entries.items())
    ]
    paths["vocab"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_jsonl(data.cohort, paths["cohort"], example_to_dict)
    save_json(data.manifest, paths["manifest"])
    return paths
