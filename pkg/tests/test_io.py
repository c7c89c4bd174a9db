import json

import pytest

from ehr_coagent.core import (
    NEGATIVE,
    POSITIVE,
    CohortExample,
    ErrorBatch,
    ErrorCase,
    FeedbackSet,
    ConsolidatedInstructions,
    Narrative,
    PredictionRecord,
    Visit,
)
from ehr_coagent.errors import FormatError
from ehr_coagent.io import (
    batch_from_dict,
    batch_to_dict,
    dumps_canonical,
    example_from_dict,
    example_to_dict,
    instructions_from_dict,
    instructions_to_dict,
    load_jsonl,
    narrative_from_dict,
    narrative_to_dict,
    prediction_from_dict,
    prediction_to_dict,
    read_code_set,
    read_visits_csv,
    save_jsonl,
    write_code_set,
    write_visits_csv,
)

from conftest import DIABETES, ECG, HYPERTENSION, STATIN, make_example, make_visit


def test_visits_csv_round_trip(tmp_path):
    visits = [
        make_visit("v1", "p1", day=0, codes=(HYPERTENSION, STATIN)),
        make_visit("v2", "p1", day=30, codes=(DIABETES,)),
        make_visit("v3", "p2", day=5, codes=()),
    ]
    path = tmp_path / "visits.csv"
    write_visits_csv(visits, path)
    back = read_visits_csv(path)
    assert {v.visit_id: v for v in back} == {v.visit_id: v for v in visits}


def test_visits_csv_codeless_visit_survives(tmp_path):
    path = tmp_path / "visits.csv"
    write_visits_csv([make_visit("v1", "p1", codes=())], path)
    back = read_visits_csv(path)
    assert back[0].codes == frozenset()


def test_visits_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "visits.csv"
    path.write_text("nope,header\n")
    with pytest.raises(FormatError):
        read_visits_csv(path)


def test_visits_csv_reports_line_number_on_bad_date(tmp_path):
    path = tmp_path / "visits.csv"
    path.write_text(
        "patient_id,visit_id,date,system,code,category\n"
        "p1,v1,not-a-date,ICD10,I10,diagnosis\n"
    )
    with pytest.raises(FormatError, match="line 2"):
        read_visits_csv(path)


def test_visits_csv_rejects_conflicting_visit_rows(tmp_path):
    path = tmp_path / "visits.csv"
    path.write_text(
        "patient_id,visit_id,date,system,code,category\n"
        "p1,v1,2020-01-01,ICD10,I10,diagnosis\n"
        "p2,v1,2020-01-01,ICD10,E11.9,diagnosis\n"
    )
    with pytest.raises(FormatError, match="conflicting"):
        read_visits_csv(path)


def test_duplicate_code_rows_collapse(tmp_path):
    path = tmp_path / "visits.csv"
    path.write_text(
        "patient_id,visit_id,date,system,code,category\n"
        "p1,v1,2020-01-01,ICD10,I10,diagnosis\n"
        "p1,v1,2020-01-01,ICD10,I10,diagnosis\n"
    )
    back = read_visits_csv(path)
    assert len(back) == 1
    assert len(back[0].codes) == 1


def test_code_set_round_trip(tmp_path):
    path = tmp_path / "codes.csv"
    write_code_set({HYPERTENSION, ECG}, path)
    assert read_code_set(path) == frozenset({HYPERTENSION, ECG})


def test_example_round_trip():
    ex = make_example("e1", "p1", label=POSITIVE, codes=(HYPERTENSION,))
    assert example_from_dict(example_to_dict(ex)) == ex


def test_narrative_round_trip():
    n = Narrative("e1", "a short story.")
    assert narrative_from_dict(narrative_to_dict(n)) == n


def test_prediction_round_trip():
    p = PredictionRecord(
        example_id="e1",
        predicted_label=POSITIVE,
        p_positive=0.75,
        reasoning="because",
        prompt_hash="abc",
        raw_response="Answer: Yes",
        extraction_mode="logprob",
        attempts=2,
    )
    assert prediction_from_dict(prediction_to_dict(p)) == p


def test_batch_and_instruction_round_trips():
    record = PredictionRecord(example_id="e1", predicted_label=POSITIVE, p_positive=0.9)
    batch = ErrorBatch(
        batch_id=3,
        items=(ErrorCase(Narrative("e1", "text."), record, NEGATIVE),),
    )
    assert batch_from_dict(batch_to_dict(batch)) == batch

    ci = ConsolidatedInstructions(
        instructions=("check meds",), source_batch_ids=(1, 2), round=2
    )
    assert instructions_from_dict(instructions_to_dict(ci)) == ci


def test_jsonl_round_trip_and_line_errors(tmp_path):
    path = tmp_path / "narratives.jsonl"
    items = [Narrative("e1", "one."), Narrative("e2", "two.")]
    save_jsonl(items, path, narrative_to_dict)
    assert load_jsonl(path, narrative_from_dict) == items

    path.write_text('{"example_id": "e1", "text": "ok."}\n{broken\n')
    with pytest.raises(FormatError, match="line 2"):
        load_jsonl(path, narrative_from_dict)


def test_jsonl_is_canonical(tmp_path):
    path = tmp_path / "out.jsonl"
    save_jsonl([Narrative("e1", "one.")], path, narrative_to_dict)
    line = path.read_text().strip()
    assert line == '{"example_id":"e1","text":"one."}'
    assert json.loads(line)


def test_dumps_canonical_sorts_keys():
    assert dumps_canonical({"b": 1, "a": 2}) == '{"a":2,"b":1}'
