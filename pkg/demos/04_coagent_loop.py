"""Run the predictor/critic loop against a scripted offline backend.

Round 1 predicts every calibration case with no guidance and gets the
positives wrong. The critic then reviews batches of those errors and writes
INSTRUCTION lines; a consolidation pass merges them, and round 2 re-predicts
with the merged instructions in every prompt. The scripted predictor only
answers Yes once the instruction tells it to look at the planted signal
codes, so the metrics show the loop doing its job.
"""

from ehr_coagent.cohort import split_cohort
from ehr_coagent.engine import AgentBackends, RunConfig, leakage_report, run_coagent
from ehr_coagent.gateway import MockBackend, MockRule, MockScript
from ehr_coagent.metrics import render_cell
from ehr_coagent.narrative import narrate_examples
from ehr_coagent.synth import SynthSpec, generate

INSTRUCTION = "CHECK-SIGNAL-CODES: treat synthetic conditions 0-2 as decisive."
SIGNAL = r"synthetic condition (?:0|1|2)(?!\d)"


def scripted(rules):
    return MockBackend(MockScript(rules=rules))


data = generate(SynthSpec(n_patients=120, vocab_sizes=(12, 6, 5), signal_codes=3,
                          signal_strength=1.0, prevalence=0.25, seed=11))
train, calibration, test = split_cohort(data.cohort, (0.4, 0.3, 0.3), seed=11)
narratives = narrate_examples(data.cohort, data.name_map)

predictor = scripted([
    MockRule(kind="regex", pattern=rf"(?s)CHECK-SIGNAL-CODES.*{SIGNAL}",
             response_text="Signal code present.\nAnswer: Yes"),
    MockRule(kind="default", response_text="Nothing decisive.\nAnswer: No"),
])
critic = scripted([
    MockRule(kind="default",
             response_text=f"The misses all carry planted codes.\nINSTRUCTION: {INSTRUCTION}"),
])
consolidator = scripted([
    MockRule(kind="default", response_text=f"INSTRUCTION: {INSTRUCTION}"),
])

result = run_coagent(
    train,
    calibration,
    test,
    RunConfig(rounds=2, batch_size_b=4, num_batches_m=3, seed=11),
    AgentBackends(predictor=predictor, critic=critic, consolidator=consolidator),
    narratives,
)

for artifact in result.rounds:
    ms = artifact.calibration_metrics
    wrong = sum(len(b.items) for b in artifact.error_batches)
    print(
        f"round {artifact.round}: calibration accuracy {render_cell(ms.accuracy)}%, "
        f"{len(artifact.error_batches)} error batches covering {wrong} misses"
    )
    for feedback in artifact.feedbacks:
        for line in feedback.instructions:
            print(f"  critic (batch {feedback.batch_id}): {line}")

final = result.final_instructions
print(f"\nstanding instructions after consolidation: {list(final.instructions)}")

ms = result.test_metrics
print(
    f"test: accuracy {render_cell(ms.accuracy)}%, sensitivity "
    f"{render_cell(ms.sensitivity)}%, specificity {render_cell(ms.specificity)}%"
)

violations = leakage_report(result.rounds, result.exemplar_ids, test, narratives)
print(f"test-set isolation violations: {len(violations)}")
