"""Confusion-matrix metrics and run-comparison reports.

The four reported metrics are accuracy, sensitivity, specificity, and F1.
Any metric whose denominator is zero is marked as undefined rather than
silently reported as 0, since zero-denominator cells are routine on the
skewed cohorts this package targets.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import POSITIVE, PredictionRecord
from .errors import EvalError

# Rendered in place of a metric whose denominator was zero.
UNDEFINED_GLYPH = "—"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts by (predicted, true) cell."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if value < 0:
                raise EvalError(f"{name} must be >= 0, got {value}")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """The same counts under the opposite positive-class convention."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


@dataclass(frozen=True)
class MetricSet:
    """The four metrics plus context; None marks an undefined value."""

    accuracy: float
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    n: int
    prevalence: float

    def __post_init__(self) -> None:
        for name in ("accuracy", "sensitivity", "specificity", "f1", "prevalence"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise EvalError(f"{name} out of [0, 1]: {value}")


def confusion_counts(
    predicted_positive: np.ndarray, actual_positive: np.ndarray
) -> tuple[int, int, int, int]:
    """Vectorized (tp, fp, fn, tn) from aligned boolean vectors."""
    predicted = np.asarray(predicted_positive, dtype=bool)
    actual = np.asarray(actual_positive, dtype=bool)
    if predicted.shape != actual.shape:
        raise EvalError(
            f"prediction/label shape mismatch: {predicted.shape} vs {actual.shape}"
        )
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    return tp, fp, fn, tn


def confusion(
    predictions: Sequence[PredictionRecord], truth: Mapping[str, str]
) -> ConfusionMatrix:
    """Tally predictions against ground truth, aligned by example_id.

    The two sides must cover exactly the same ids; any id present on one
    side only is reported by name.
    """
    seen = set()
    for record in predictions:
        if record.example_id not in truth:
            raise EvalError(f"prediction for unknown example {record.example_id!r}")
        if record.example_id in seen:
            raise EvalError(f"duplicate prediction for example {record.example_id!r}")
        seen.add(record.example_id)
    missing = set(truth) - seen
    if missing:
        raise EvalError(f"no prediction for example {sorted(missing)[0]!r}")

    predicted = np.fromiter(
        (r.predicted_label == POSITIVE for r in predictions), dtype=bool, count=len(predictions)
    )
    actual = np.fromiter(
        (truth[r.example_id] == POSITIVE for r in predictions), dtype=bool, count=len(predictions)
    )
    tp, fp, fn, tn = confusion_counts(predicted, actual)
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """Compute the four metrics; zero-denominator cases become None."""
    if cm.n == 0:
        raise EvalError("cannot compute metrics over zero examples")

    def ratio(numerator: int, denominator: int) -> float | None:
        return numerator / denominator if denominator > 0 else None

    accuracy = (cm.tp + cm.tn) / cm.n
    sensitivity = ratio(cm.tp, cm.tp + cm.fn)
    specificity = ratio(cm.tn, cm.tn + cm.fp)
    precision = ratio(cm.tp, cm.tp + cm.fp)
    if precision is None or sensitivity is None or precision + sensitivity == 0:
        f1 = None
    else:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    return MetricSet(
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1,
        n=cm.n,
        prevalence=(cm.tp + cm.fn) / cm.n,
    )


def evaluate(
    predictions: Sequence[PredictionRecord], truth: Mapping[str, str]
) -> MetricSet:
    """Convenience: confusion + metrics in one call."""
    return metrics(confusion(predictions, truth))


def metricset_to_dict(ms: MetricSet) -> dict:
    return {
        "accuracy": ms.accuracy,
        "sensitivity": ms.sensitivity,
        "specificity": ms.specificity,
        "f1": ms.f1,
        "n": ms.n,
        "prevalence": ms.prevalence,
    }


def metricset_from_dict(payload: dict) -> MetricSet:
    return MetricSet(
        accuracy=payload["accuracy"],
        sensitivity=payload["sensitivity"],
        specificity=payload["specificity"],
        f1=payload["f1"],
        n=int(payload["n"]),
        prevalence=payload["prevalence"],
    )


def render_cell(value: float | None) -> str:
    """Format one metric as a percentage with two decimals, or the
    undefined glyph."""
    if value is None:
        return UNDEFINED_GLYPH
    return f"{value * 100:.2f}"


@dataclass(frozen=True)
class Report:
    """Comparison table over runs, in plain-text and CSV forms."""

    text: str
    csv: str


_COLUMNS = ("run", "n", "prevalence", "accuracy", "sensitivity", "specificity", "f1")


def report(runs: Sequence[tuple[str, MetricSet]]) -> Report:
    """Build the cross-run comparison table.

    Rows are ordered by run label so repeated invocations with the same
    inputs emit identical bytes.  Metric cells are percentages with two
    decimals; undefined metrics render as a dash glyph in both forms.
    """
    if not runs:
        raise EvalError("report needs at least one run")
    ordered = sorted(runs, key=lambda pair: pair[0])
    rows = []
    for label, ms in ordered:
        rows.append(
            (
                label,
                str(ms.n),
                render_cell(ms.prevalence),
                render_cell(ms.accuracy),
                render_cell(ms.sensitivity),
                render_cell(ms.specificity),
                render_cell(ms.f1),
            )
        )

    csv_lines = [",".join(_COLUMNS)]
    csv_lines.extend(",".join(row) for row in rows)

    widths = [
        max(len(_COLUMNS[i]), max(len(row[i]) for row in rows))
        for i in range(len(_COLUMNS))
    ]
    header = "  ".join(name.ljust(widths[i]) for i, name in enumerate(_COLUMNS))
    rule = "  ".join("-" * w for w in widths)
    text_lines = [header, rule]
    for row in rows:
        text_lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))

    return Report(text="\n".join(text_lines) + "\n", csv="\n".join(csv_lines) + "\n")
