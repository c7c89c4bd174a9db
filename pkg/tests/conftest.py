"""Shared fixtures: a tiny hand-built clinical dataset and mock helpers."""

import datetime

import pytest

from ehr_coagent.core import (
    NEGATIVE,
    POSITIVE,
    TRAIN,
    CodeCategory,
    CodingSystem,
    CohortExample,
    MedicalCode,
    Narrative,
    Visit,
)
from ehr_coagent.vocab import CodeNameMap, FallbackPolicy


def code(system="ICD10", value="I10", category="diagnosis"):
    return MedicalCode(system, value, category)


HYPERTENSION = MedicalCode(CodingSystem.ICD10, "I10", CodeCategory.DIAGNOSIS)
DIABETES = MedicalCode(CodingSystem.ICD10, "E11.9", CodeCategory.DIAGNOSIS)
STATIN = MedicalCode(CodingSystem.NDC, "0071-0155", CodeCategory.MEDICATION)
ECG = MedicalCode(CodingSystem.CPT, "93000", CodeCategory.PROCEDURE)


@pytest.fixture
def name_map():
    return CodeNameMap(
        entries={
            ("ICD10", "I10"): "hypertension",
            ("ICD10", "E11.9"): "type 2 diabetes",
            ("NDC", "0071-0155"): "atorvastatin",
            ("CPT", "93000"): "electrocardiogram",
        },
        fallback_policy=FallbackPolicy.RAW_CODE,
    )


def make_visit(visit_id="v1", patient_id="p1", day=0, codes=(HYPERTENSION,)):
    return Visit(
        visit_id=visit_id,
        patient_id=patient_id,
        date=datetime.date(2020, 1, 1) + datetime.timedelta(days=day),
        codes=frozenset(codes),
    )


def make_example(example_id="p1:pair0", patient_id="p1", label=POSITIVE, split=TRAIN, codes=(HYPERTENSION,), day=0):
    return CohortExample(
        example_id=example_id,
        patient_id=patient_id,
        input_visit=make_visit(f"{example_id}-visit", patient_id, day, codes),
        label=label,
        split=split,
    )


def make_pool(n_pos, n_neg, split=TRAIN):
    """A labeled pool with distinct narratives for exemplar sampling tests."""
    examples = []
    narratives = {}
    for i in range(n_pos):
        ex = make_example(f"pos{i}", f"pp{i}", POSITIVE, split)
        examples.append(ex)
        narratives[ex.example_id] = Narrative(ex.example_id, f"positive case number {i}.")
    for i in range(n_neg):
        ex = make_example(f"neg{i}", f"pn{i}", NEGATIVE, split)
        examples.append(ex)
        narratives[ex.example_id] = Narrative(ex.example_id, f"negative case number {i}.")
    return examples, narratives


CVD = MedicalCode(CodingSystem.ICD10, "I21", CodeCategory.DIAGNOSIS)


def index_fixture_visits(include_extras=False):
    """Hand-built patients for the index-encounter recipe at horizon 180.

    Worked out by hand before coding: P2 falls to the two-visit rule and P3
    to the record-span rule; P5 and P6 survive positive with input = their
    first visit (earliest within 180 days of the endpoint); P7 and P8
    survive negative. `include_extras` adds P1 (no inclusion code,
    pre-filter) and P4 (target code at the index visit, rule 3).
    """
    visits = [
        # P2: qualifying but only one visit.
        make_visit("v2a", "P2", 0, (DIABETES,)),
        # P3: span 100 days < 180.
        make_visit("v3a", "P3", 0, (DIABETES,)),
        make_visit("v3b", "P3", 100, ()),
        # P5: endpoint at day 166 (<= 180 after index day 0); span 335.
        make_visit("v5a", "P5", 0, (DIABETES,)),
        make_visit("v5b", "P5", 60, (STATIN,)),
        make_visit("v5c", "P5", 166, (CVD,)),
        make_visit("v5d", "P5", 335, ()),
        # P6: endpoint at day 486, 120 days after index day 366; span 334.
        make_visit("v6a", "P6", 366, (DIABETES,)),
        make_visit("v6b", "P6", 486, (CVD,)),
        make_visit("v6c", "P6", 700, ()),
        # P7: negative, span 227; only v7a is >= 180 days before the last.
        make_visit("v7a", "P7", 31, (DIABETES,)),
        make_visit("v7b", "P7", 258, ()),
        # P8: negative, span 325; v8a and v8b both eligible inputs.
        make_visit("v8a", "P8", 60, (DIABETES, HYPERTENSION)),
        make_visit("v8b", "P8", 152, (ECG,)),
        make_visit("v8c", "P8", 385, ()),
    ]
    if include_extras:
        visits += [
            # P1: two visits, no inclusion code anywhere.
            make_visit("v1a", "P1", 0, (HYPERTENSION,)),
            make_visit("v1b", "P1", 213, ()),
            # P4: index visit already carries the target code.
            make_visit("v4a", "P4", 0, (DIABETES, CVD)),
            make_visit("v4b", "P4", 244, ()),
        ]
    return visits
