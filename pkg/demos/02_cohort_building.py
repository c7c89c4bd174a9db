"""Build prediction cohorts from raw visits, two ways.

Recipe 1 (adjacent pairs): every consecutive visit pair becomes an example;
the earlier visit is the input and the label says whether the later visit
carries a target code. Recipe 2 (index encounter): pick each patient's first
qualifying visit, apply exclusion rules, and label by whether a target code
appears within a follow-up horizon. The script finishes with a stratified
split of the resulting cohort.
"""

import datetime
from collections import Counter

from ehr_coagent.cohort import (
    CohortMode,
    CohortSpec,
    ExclusionCounts,
    VisitStore,
    build_adjacent_pairs,
    build_index_cohort,
    split_cohort,
    stratified_sample,
)
from ehr_coagent.core import CodeCategory, CodingSystem, MedicalCode, Visit

DIABETES = MedicalCode(CodingSystem.ICD10, "E11", CodeCategory.DIAGNOSIS)
CVD = MedicalCode(CodingSystem.ICD10, "I25", CodeCategory.DIAGNOSIS)
STATIN = MedicalCode(CodingSystem.OTHER, "statin", CodeCategory.MEDICATION)


def visit(visit_id, patient_id, day, codes):
    return Visit(
        visit_id=visit_id,
        patient_id=patient_id,
        date=datetime.date(2021, 1, 1) + datetime.timedelta(days=day),
        codes=frozenset(codes),
    )


store = VisitStore.from_visits([
    # Patient A: four visits, CVD shows up at day 90.
    visit("a1", "A", 0, {DIABETES}),
    visit("a2", "A", 30, {DIABETES, STATIN}),
    visit("a3", "A", 90, {CVD}),
    visit("a4", "A", 200, {STATIN}),
    # Patient B: two visits, never develops CVD.
    visit("b1", "B", 0, {DIABETES}),
    visit("b2", "B", 400, {STATIN}),
    # Patient C: a single visit, excluded by the index recipe.
    visit("c1", "C", 0, {DIABETES}),
])

pairs = build_adjacent_pairs(
    store, CohortSpec(mode=CohortMode.ADJACENT_PAIRS, target_codes={CVD})
)
print(f"adjacent pairs: {len(pairs)} examples")
for ex in pairs:
    print(f"  {ex.example_id}: input {ex.input_visit.visit_id} -> {ex.label}")

counts = ExclusionCounts()
cohort = build_index_cohort(
    store,
    CohortSpec(mode=CohortMode.INDEX_ENCOUNTER, target_codes={CVD}, horizon_days=180),
    inclusion_codes={DIABETES},
    counts_out=counts,
)
print(f"\nindex encounter: {len(cohort)} examples")
for ex in cohort:
    print(f"  patient {ex.patient_id}: input {ex.input_visit.visit_id} -> {ex.label}")
print(f"exclusions: {counts}")

# A bigger synthetic cohort shows the split and sampling behavior.
from ehr_coagent.synth import SynthSpec, generate

data = generate(SynthSpec(n_patients=500, prevalence=0.3, seed=7))
train, calibration, test = split_cohort(data.cohort, (0.4, 0.3, 0.3), seed=7)
for name, bucket in (("train", train), ("calibration", calibration), ("test", test)):
    dist = Counter(ex.label for ex in bucket)
    print(f"\n{name}: {len(bucket)} examples, {dict(dist)}")

sample = stratified_sample(data.cohort, 100, seed=7)
dist = Counter(ex.label for ex in sample)
print(f"\nstratified sample of 100 keeps the 30% prevalence: {dict(dist)}")
