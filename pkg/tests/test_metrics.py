import random

import numpy as np
import pytest

from ehr_coagent.core import NEGATIVE, POSITIVE, PredictionRecord
from ehr_coagent.errors import EvalError
from ehr_coagent.metrics import (
    UNDEFINED_GLYPH,
    ConfusionMatrix,
    MetricSet,
    confusion,
    confusion_counts,
    evaluate,
    metrics,
    metricset_from_dict,
    metricset_to_dict,
    render_cell,
    report,
)


def prediction(example_id, label):
    p = 0.9 if label == POSITIVE else 0.1
    return PredictionRecord(example_id=example_id, predicted_label=label, p_positive=p)


def paired_records(pairs):
    """pairs: list of (predicted label, true label) -> (predictions, truth)."""
    predictions = []
    truth = {}
    for i, (pred, true) in enumerate(pairs):
        predictions.append(prediction(f"e{i}", pred))
        truth[f"e{i}"] = true
    return predictions, truth


# ---------------------------------------------------------------------------
# confusion
# ---------------------------------------------------------------------------

def test_confusion_all_correct():
    pairs = [(POSITIVE, POSITIVE)] * 5 + [(NEGATIVE, NEGATIVE)] * 5
    cm = confusion(*paired_records(pairs))
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (5, 0, 0, 5)


def test_confusion_all_predicted_positive():
    pairs = [(POSITIVE, POSITIVE)] * 3 + [(POSITIVE, NEGATIVE)] * 7
    cm = confusion(*paired_records(pairs))
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (3, 7, 0, 0)


def test_confusion_hand_built_ten_records():
    # Counted by hand: 3 TP, 1 FP, 2 FN, 4 TN.
    pairs = (
        [(POSITIVE, POSITIVE)] * 3
        + [(POSITIVE, NEGATIVE)] * 1
        + [(NEGATIVE, POSITIVE)] * 2
        + [(NEGATIVE, NEGATIVE)] * 4
    )
    cm = confusion(*paired_records(pairs))
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (3, 1, 2, 4)
    assert cm.n == 10


def test_confusion_names_unmatched_ids():
    predictions, truth = paired_records([(POSITIVE, POSITIVE)])
    with pytest.raises(EvalError, match="e9"):
        confusion([prediction("e9", POSITIVE)], truth)
    with pytest.raises(EvalError, match="duplicate"):
        confusion(predictions * 2, truth)
    truth["extra"] = NEGATIVE
    with pytest.raises(EvalError, match="extra"):
        confusion(predictions, truth)


def test_confusion_counts_shape_check():
    with pytest.raises(EvalError):
        confusion_counts(np.array([True, False]), np.array([True]))


def test_confusion_matrix_rejects_negative_cells():
    with pytest.raises(EvalError):
        ConfusionMatrix(tp=-1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_metrics_hand_derived_values():
    cm = ConfusionMatrix(tp=3, fp=1, fn=2, tn=4)
    ms = metrics(cm)
    # Oracles computed from the formulas by hand before implementation:
    # accuracy 7/10, sensitivity 3/5, specificity 4/5,
    # precision 3/4 -> F1 = 2 * 0.75 * 0.6 / 1.35.
    assert ms.accuracy == 0.7
    assert ms.sensitivity == 0.6
    assert ms.specificity == 0.8
    assert abs(ms.f1 - 2 * 0.75 * 0.6 / (0.75 + 0.6)) < 1e-12
    assert abs(ms.f1 - 0.6667) < 5e-5
    assert ms.n == 10 and ms.prevalence == 0.5


def test_metrics_perfect_predictions():
    ms = metrics(ConfusionMatrix(tp=4, fp=0, fn=0, tn=6))
    assert (ms.accuracy, ms.sensitivity, ms.specificity, ms.f1) == (1.0, 1.0, 1.0, 1.0)


def test_metrics_no_positive_predictions_leaves_f1_undefined():
    ms = metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=7))
    assert ms.f1 is None
    assert ms.sensitivity == 0.0
    assert ms.specificity == 1.0


def test_metrics_all_one_class_leaves_sides_undefined():
    ms = metrics(ConfusionMatrix(tp=5, fp=0, fn=0, tn=0))
    assert ms.specificity is None
    assert ms.sensitivity == 1.0


def test_metrics_rejects_empty_matrix():
    with pytest.raises(EvalError):
        metrics(ConfusionMatrix())


def test_metricset_validates_range():
    with pytest.raises(EvalError):
        MetricSet(accuracy=1.2, sensitivity=None, specificity=None, f1=None, n=1, prevalence=0.5)


def test_metricset_dict_round_trip():
    ms = metrics(ConfusionMatrix(tp=3, fp=1, fn=2, tn=4))
    assert metricset_from_dict(metricset_to_dict(ms)) == ms
    undefined = metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=7))
    assert metricset_from_dict(metricset_to_dict(undefined)) == undefined


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

def test_counts_and_metrics_agree_with_brute_force():
    rng = random.Random(13)
    for _ in range(1000):
        n = rng.randint(1, 30)
        predicted = [rng.random() < 0.5 for _ in range(n)]
        actual = [rng.random() < 0.5 for _ in range(n)]
        tp = sum(1 for p, a in zip(predicted, actual) if p and a)
        fp = sum(1 for p, a in zip(predicted, actual) if p and not a)
        fn = sum(1 for p, a in zip(predicted, actual) if not p and a)
        tn = sum(1 for p, a in zip(predicted, actual) if not p and not a)
        assert confusion_counts(np.array(predicted), np.array(actual)) == (tp, fp, fn, tn)

        ms = metrics(ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn))
        assert abs(ms.accuracy - (tp + tn) / n) < 1e-12
        if tp + fn > 0:
            assert abs(ms.sensitivity - tp / (tp + fn)) < 1e-12
        else:
            assert ms.sensitivity is None
        if tn + fp > 0:
            assert abs(ms.specificity - tn / (tn + fp)) < 1e-12
        else:
            assert ms.specificity is None


def test_label_swap_exchanges_sensitivity_and_specificity():
    rng = random.Random(5)
    for _ in range(100):
        cm = ConfusionMatrix(
            tp=rng.randint(0, 9),
            fp=rng.randint(0, 9),
            fn=rng.randint(0, 9),
            tn=rng.randint(1, 9),
        )
        ms = metrics(cm)
        flipped = metrics(cm.swapped())
        assert ms.sensitivity == flipped.specificity
        assert ms.specificity == flipped.sensitivity
        assert ms.accuracy == flipped.accuracy


def test_accuracy_decomposes_over_prevalence():
    rng = random.Random(29)
    for _ in range(100):
        cm = ConfusionMatrix(
            tp=rng.randint(1, 9),
            fp=rng.randint(1, 9),
            fn=rng.randint(1, 9),
            tn=rng.randint(1, 9),
        )
        ms = metrics(cm)
        recomposed = ms.prevalence * ms.sensitivity + (1 - ms.prevalence) * ms.specificity
        assert abs(ms.accuracy - recomposed) < 1e-12


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def test_report_formats_derived_row():
    ms = metrics(ConfusionMatrix(tp=3, fp=1, fn=2, tn=4))
    built = report([("run1", ms)])
    assert "70.00,60.00,80.00,66.67" in built.csv
    assert built.csv.splitlines()[0] == "run,n,prevalence,accuracy,sensitivity,specificity,f1"
    assert built.csv.splitlines()[1] == "run1,10,50.00,70.00,60.00,80.00,66.67"
    for cell in ("70.00", "60.00", "80.00", "66.67"):
        assert cell in built.text


def test_report_orders_rows_by_label():
    ms = metrics(ConfusionMatrix(tp=1, fp=1, fn=1, tn=1))
    built = report([("zeta", ms), ("alpha", ms)])
    lines = built.csv.splitlines()
    assert lines[1].startswith("alpha,") and lines[2].startswith("zeta,")
    assert built.text.index("alpha") < built.text.index("zeta")


def test_report_renders_undefined_as_glyph():
    ms = metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=7))
    built = report([("r", ms)])
    assert built.csv.splitlines()[1].endswith(UNDEFINED_GLYPH)
    assert UNDEFINED_GLYPH in built.text


def test_report_rejects_empty():
    with pytest.raises(EvalError):
        report([])


def test_render_cell():
    assert render_cell(None) == UNDEFINED_GLYPH
    assert render_cell(0.6667) == "66.67"
    assert render_cell(1.0) == "100.00"


def test_evaluate_convenience():
    pairs = [(POSITIVE, POSITIVE)] * 3 + [(NEGATIVE, NEGATIVE)] * 7
    ms = evaluate(*paired_records(pairs))
    assert ms.accuracy == 1.0 and ms.prevalence == 0.3
