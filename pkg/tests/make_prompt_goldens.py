"""Regenerate the predictor-prompt golden files.

Run `python3 tests/make_prompt_goldens.py` after any deliberate template
change, then review the diff. The grid covers every combination of the
three strategy flags, exemplars off/on (six), and instructions off/on:
32 files named cot{0|1}_fx{0|1}_prev{0|1}_ex{0|6}_ins{0|1}.txt.
"""

import itertools
from pathlib import Path

from ehr_coagent.core import NEGATIVE, POSITIVE, ConsolidatedInstructions, Narrative
from ehr_coagent.prompts import Exemplar, PromptConfig, build_predictor_prompt

GOLDEN_DIR = Path(__file__).parent / "golden" / "prompts"

QUERY = Narrative(
    "query",
    "Diagnoses: hypertension, and type 2 diabetes. "
    "Medications: none recorded. Procedures: none recorded.",
)

PREVALENCE = 0.214

INSTRUCTIONS = ConsolidatedInstructions(
    instructions=(
        "Weigh medication burden alongside the diagnoses.",
        "Do not treat a lone hypertension code as a positive signal.",
    ),
    source_batch_ids=(1, 2),
    round=1,
)


def golden_exemplars():
    out = []
    for i in range(3):
        out.append(Exemplar(Narrative(f"pos{i}", f"positive case number {i}."), POSITIVE))
        out.append(Exemplar(Narrative(f"neg{i}", f"negative case number {i}."), NEGATIVE))
    return out


def golden_grid():
    """Yield (file name, config, exemplars) for every combination."""
    for cot, fx, prev, n_ex, ins in itertools.product(
        (False, True), (False, True), (False, True), (0, 6), (False, True)
    ):
        name = f"cot{cot:d}_fx{fx:d}_prev{prev:d}_ex{n_ex}_ins{ins:d}.txt"
        config = PromptConfig(
            use_cot=cot,
            use_factor_interactions=fx,
            use_prevalence=prev,
            few_shot_n=n_ex,
            instructions=INSTRUCTIONS if ins else None,
        )
        exemplars = golden_exemplars() if n_ex else []
        yield name, config, exemplars


def build(config, exemplars):
    prevalence = PREVALENCE if config.use_prevalence else None
    return build_predictor_prompt(QUERY, config, exemplars=exemplars, prevalence=prevalence)


def main():
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for name, config, exemplars in golden_grid():
        (GOLDEN_DIR / name).write_text(build(config, exemplars).text, encoding="utf-8")
    print(f"wrote {len(list(golden_grid()))} files under {GOLDEN_DIR}")


if __name__ == "__main__":
    main()
