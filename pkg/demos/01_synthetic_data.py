"""Generate a synthetic visit dataset with a planted diagnosis signal.

The generator builds a vocabulary of made-up codes, assigns each patient a
label at an exact prevalence, and plants a handful of signal diagnosis codes
in the final visit of positive patients. The signal manifest records which
codes carry the label so downstream experiments can check what a model
actually learned.
"""

import json
from collections import Counter
from pathlib import Path

from ehr_coagent.synth import SynthSpec, generate, write_generated

OUT = Path(__file__).resolve().parent / "demo_output" / "01_synthetic_data"

spec = SynthSpec(
    n_patients=200,
    visits_per_patient=(1, 4),
    vocab_sizes=(30, 15, 10),
    prevalence=0.3,
    signal_codes=3,
    signal_strength=0.9,
    seed=42,
)
data = generate(spec)

labels = Counter(ex.label for ex in data.cohort)
print(f"generated {len(data.cohort)} patients: {dict(labels)}")
print(f"visit rows: {len(data.store)}, vocabulary entries: {len(data.name_map.entries)}")

ex = data.cohort[0]
visits = data.store.visits_for(ex.patient_id)
print(f"\npatient {ex.patient_id} ({ex.label}), {len(visits)} visits:")
for visit in visits:
    code_list = ", ".join(sorted(c.code for c in visit.codes))
    print(f"  {visit.date}  [{code_list}]")
print(f"input visit for prediction: {ex.input_visit.visit_id} (the last one)")

print(f"\nsignal codes: {data.manifest['signal_codes']}")
print(f"planted with strength {data.manifest['spec']['signal_strength']}")

write_generated(data, OUT)
print(f"\nwrote visits.csv, vocab.tsv, cohort.jsonl, signal_manifest.json to {OUT}")
manifest = json.loads((OUT / "signal_manifest.json").read_text())
print(f"manifest on disk lists {len(manifest['signal_codes'])} signal codes")
