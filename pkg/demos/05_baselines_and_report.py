"""Classical baselines on the synthetic task, full-data versus few-shot.

Featurizes the cohort into binary code-presence vectors, trains a decision
tree, logistic regression, and random forest on the full training split,
then retrains each on six examples to mirror what a prompt with six
exemplars gives a language model. The closing table shows the gap.
"""

from pathlib import Path

from ehr_coagent import baselines as bl
from ehr_coagent.metrics import ConfusionMatrix, MetricSet, confusion_counts, metrics, report
from ehr_coagent.synth import SynthSpec, generate

OUT = Path(__file__).resolve().parent / "demo_output" / "05_baselines_and_report"

data = generate(SynthSpec(n_patients=1200, prevalence=0.3, signal_strength=0.9, seed=19))
train, test = data.cohort[:900], data.cohort[900:]

universe = bl.code_universe_from_examples(train)
train_f = bl.featurize(train, universe)
test_f = bl.featurize(test, universe)
print(f"feature matrix: {train_f.X.shape[0]} train rows, {train_f.X.shape[1]} binary code columns")


def score(model) -> MetricSet:
    predicted = bl.predict_labels(model, test_f.X).astype(bool)
    tp, fp, fn, tn = confusion_counts(predicted, test_f.y.astype(bool))
    return metrics(ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn))


runs = []
for kind in bl.MODEL_KINDS:
    full = bl.train_model(kind, train_f.X, train_f.y)
    few = bl.few_shot_fit(kind, train_f, n=6, seed=19)
    runs.append((f"{kind}-full", score(full)))
    runs.append((f"{kind}-fewshot6", score(few)))

table = report(runs)
print()
print(table.text)

OUT.mkdir(parents=True, exist_ok=True)
(OUT / "table.csv").write_text(table.csv, encoding="utf-8")
print(f"wrote {OUT / 'table.csv'}")
