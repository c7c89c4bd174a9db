"""Turn coded visits into prose and compose predictor prompts from them.

A narrative is a deterministic sentence listing the visit's diagnoses,
medications, and procedures by display name. Prompts are assembled from the
narrative plus optional parts: prevalence and reasoning clauses, standing
instructions from earlier critic rounds, and class-balanced exemplars.
"""

from ehr_coagent.core import ConsolidatedInstructions
from ehr_coagent.narrative import narrate_examples
from ehr_coagent.prompts import (
    PromptConfig,
    build_predictor_prompt,
    sample_exemplars,
)
from ehr_coagent.synth import SynthSpec, generate

data = generate(SynthSpec(n_patients=40, vocab_sizes=(12, 6, 5), seed=5))
narratives = narrate_examples(data.cohort, data.name_map)

query = data.cohort[0]
print("narrative for one input visit:")
print(f"  {narratives[query.example_id].text}")

print("\n--- zero-shot prompt ---")
plain = build_predictor_prompt(narratives[query.example_id], PromptConfig())
print(plain.text)

print("--- with prevalence and reasoning clauses ---")
clauses = build_predictor_prompt(
    narratives[query.example_id],
    PromptConfig(use_prevalence=True, use_cot=True),
    prevalence=0.3,
)
print(clauses.text)

print("--- few-shot with standing instructions ---")
exemplars = sample_exemplars(
    data.cohort[1:], narratives, n_positive=1, n_negative=1, seed=5
)
instructions = ConsolidatedInstructions(
    instructions=(
        "Weigh diagnosis codes more heavily than medications.",
        "Do not assume rare conditions without direct evidence.",
    ),
    source_batch_ids=(1, 2),
    round=1,
)
full = build_predictor_prompt(
    narratives[query.example_id],
    PromptConfig(few_shot_n=2, instructions=instructions),
    exemplars=exemplars,
)
print(full.text)

print(f"prompt hash (stable across runs): {full.prompt_hash}")
