"""Persistence for the pipeline's record types.

Two formats cover everything:

* Visits travel as a comma-separated text file with header
  ``patient_id,visit_id,date,system,code,category`` and one row per
  (visit, code). A visit with no codes is represented by a single row
  whose system/code/category fields are all empty, so round-trips stay
  lossless.
* Everything else (cohorts, narratives, predictions, batches, feedback,
  instructions) is line-delimited JSON with the field names of the core
  types, written with sorted keys so identical inputs give byte-identical
  files.
"""

from __future__ import annotations

import csv
import datetime
import json
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .core import (
    CohortExample,
    ConsolidatedInstructions,
    ErrorBatch,
    ErrorCase,
    FeedbackSet,
    MedicalCode,
    Narrative,
    PredictionRecord,
    Visit,
)
from .errors import FormatError

T = TypeVar("T")

VISIT_CSV_HEADER = ["patient_id", "visit_id", "date", "system", "code", "category"]


# ---------------------------------------------------------------------------
# Visits: columnar CSV
# ---------------------------------------------------------------------------

def write_visits_csv(visits: Iterable[Visit], path: str | Path) -> None:
    rows: list[list[str]] = []
    for visit in sorted(visits, key=lambda v: (v.patient_id, v.date.isoformat(), v.visit_id)):
        codes = visit.sorted_codes()
        if not codes:
            rows.append([visit.patient_id, visit.visit_id, visit.date.isoformat(), "", "", ""])
            continue
        for code in codes:
            rows.append([
                visit.patient_id,
                visit.visit_id,
                visit.date.isoformat(),
                code.system.value,
                code.code,
                code.category.value,
            ])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VISIT_CSV_HEADER)
        writer.writerows(rows)


def read_visits_csv(path: str | Path) -> list[Visit]:
    """Parse a visits file, grouping rows into Visit objects.

    Rows of one visit must agree on patient_id and date; conflicts raise
    FormatError with the offending line number.
    """
    meta: dict[str, tuple[str, datetime.date]] = {}
    codes: dict[str, set[MedicalCode]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != VISIT_CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(VISIT_CSV_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell for cell in row):
                continue
            if len(row) != 6:
                raise FormatError(f"{path}: line {lineno}: expected 6 fields, got {len(row)}")
            patient_id, visit_id, date_text, system, code, category = row
            try:
                date = datetime.date.fromisoformat(date_text)
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: bad date {date_text!r}") from exc
            if visit_id in meta:
                if meta[visit_id] != (patient_id, date):
                    raise FormatError(
                        f"{path}: line {lineno}: visit {visit_id!r} has conflicting patient/date"
                    )
            else:
                meta[visit_id] = (patient_id, date)
                codes[visit_id] = set()
                order.append(visit_id)
            if system or code or category:
                try:
                    codes[visit_id].add(MedicalCode(system, code, category))
                except ValueError as exc:
                    raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return [
        Visit(visit_id=vid, patient_id=meta[vid][0], date=meta[vid][1], codes=frozenset(codes[vid]))
        for vid in order
    ]


# ---------------------------------------------------------------------------
# Code sets: one system,code,category row per line (no header)
# ---------------------------------------------------------------------------

def read_code_set(path: str | Path) -> frozenset[MedicalCode]:
    out: set[MedicalCode] = set()
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell for cell in row):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: line {lineno}: expected system,code,category")
            try:
                out.add(MedicalCode(row[0], row[1], row[2]))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return frozenset(out)


def write_code_set(codes: Iterable[MedicalCode], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for code in sorted(codes, key=lambda c: c.sort_key):
            writer.writerow([code.system.value, code.code, code.category.value])


# ---------------------------------------------------------------------------
# JSON codecs
# ---------------------------------------------------------------------------

def code_to_dict(code: MedicalCode) -> dict[str, str]:
    return {"system": code.system.value, "code": code.code, "category": code.category.value}


def code_from_dict(d: dict[str, Any]) -> MedicalCode:
    return MedicalCode(d["system"], d["code"], d["category"])


def visit_to_dict(visit: Visit) -> dict[str, Any]:
    return {
        "visit_id": visit.visit_id,
        "patient_id": visit.patient_id,
        "date": visit.date.isoformat(),
        "codes": [code_to_dict(c) for c in visit.sorted_codes()],
    }


def visit_from_dict(d: dict[str, Any]) -> Visit:
    return Visit(
        visit_id=d["visit_id"],
        patient_id=d["patient_id"],
        date=datetime.date.fromisoformat(d["date"]),
        codes=frozenset(code_from_dict(c) for c in d["codes"]),
    )


def example_to_dict(ex: CohortExample) -> dict[str, Any]:
    return {
        "example_id": ex.example_id,
        "patient_id": ex.patient_id,
        "input_visit": visit_to_dict(ex.input_visit),
        "label": ex.label,
        "split": ex.split,
        "task_id": ex.task_id,
    }


def example_from_dict(d: dict[str, Any]) -> CohortExample:
    return CohortExample(
        example_id=d["example_id"],
        patient_id=d["patient_id"],
        input_visit=visit_from_dict(d["input_visit"]),
        label=d["label"],
        split=d["split"],
        task_id=d.get("task_id", ""),
    )


def narrative_to_dict(n: Narrative) -> dict[str, str]:
    return {"example_id": n.example_id, "text": n.text}


def narrative_from_dict(d: dict[str, Any]) -> Narrative:
    return Narrative(example_id=d["example_id"], text=d["text"])


def prediction_to_dict(p: PredictionRecord) -> dict[str, Any]:
    return {
        "example_id": p.example_id,
        "predicted_label": p.predicted_label,
        "p_positive": p.p_positive,
        "reasoning": p.reasoning,
        "prompt_hash": p.prompt_hash,
        "raw_response": p.raw_response,
        "extraction_mode": p.extraction_mode,
        "attempts": p.attempts,
        "failed": p.failed,
    }


def prediction_from_dict(d: dict[str, Any]) -> PredictionRecord:
    return PredictionRecord(
        example_id=d["example_id"],
        predicted_label=d["predicted_label"],
        p_positive=d["p_positive"],
        reasoning=d.get("reasoning", ""),
        prompt_hash=d.get("prompt_hash", ""),
        raw_response=d.get("raw_response", ""),
        extraction_mode=d.get("extraction_mode", "text_only"),
        attempts=d.get("attempts", 1),
        failed=d.get("failed", False),
    )


def batch_to_dict(batch: ErrorBatch) -> dict[str, Any]:
    return {
        "batch_id": batch.batch_id,
        "items": [
            {
                "narrative": narrative_to_dict(item.narrative),
                "prediction": prediction_to_dict(item.prediction),
                "true_label": item.true_label,
            }
            for item in batch.items
        ],
    }


def batch_from_dict(d: dict[str, Any]) -> ErrorBatch:
    return ErrorBatch(
        batch_id=d["batch_id"],
        items=tuple(
            ErrorCase(
                narrative=narrative_from_dict(item["narrative"]),
                prediction=prediction_from_dict(item["prediction"]),
                true_label=item["true_label"],
            )
            for item in d["items"]
        ),
    )


def feedback_to_dict(f: FeedbackSet) -> dict[str, Any]:
    return {"batch_id": f.batch_id, "instructions": list(f.instructions)}


def feedback_from_dict(d: dict[str, Any]) -> FeedbackSet:
    return FeedbackSet(batch_id=d["batch_id"], instructions=tuple(d["instructions"]))


def instructions_to_dict(ci: ConsolidatedInstructions) -> dict[str, Any]:
    return {
        "instructions": list(ci.instructions),
        "source_batch_ids": list(ci.source_batch_ids),
        "round": ci.round,
    }


def instructions_from_dict(d: dict[str, Any]) -> ConsolidatedInstructions:
    return ConsolidatedInstructions(
        instructions=tuple(d["instructions"]),
        source_batch_ids=tuple(d["source_batch_ids"]),
        round=d["round"],
    )


# ---------------------------------------------------------------------------
# Line-delimited helpers
# ---------------------------------------------------------------------------

def dumps_canonical(obj: Any) -> str:
    """Deterministic single-line JSON: sorted keys, compact separators."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def save_jsonl(items: Sequence[T], path: str | Path, encoder: Callable[[T], dict[str, Any]]) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(dumps_canonical(encoder(item)))
            fh.write("\n")


def load_jsonl(path: str | Path, decoder: Callable[[dict[str, Any]], T]) -> list[T]:
    out: list[T] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(decoder(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return out


def save_json(obj: Any, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2))
        fh.write("\n")


def load_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)
