"""Command-line entry point wiring all pipeline stages.

One binary with subcommands: synthetic data generation, cohort building
and splitting, narration, prompt preview, single-agent prediction, the
full co-agent loop, classical baselines, evaluation, and report assembly.
Exit codes: 0 success, 1 usage error, 2 runtime error.  Every run that
writes an output directory also writes a manifest capturing the merged
configuration, seeds, and package version; wall-clock timestamps live
only in the manifest's `timestamps` field.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import baselines as bl
from .cohort import (
    CohortMode,
    CohortSpec,
    ExclusionCounts,
    VisitStore,
    build_adjacent_pairs,
    build_index_cohort,
    split_cohort,
)
from .config import AppConfig, load_app_config, make_backends, prompt_config_from_dict
from .core import POSITIVE, CohortExample, MedicalCode, validate_cohort
from .engine import (
    leakage_report,
    manifest_for_run,
    run_coagent,
    run_config_to_dict,
    run_predictor,
)
from .errors import CoAgentError, ConfigError
from .io import (
    example_from_dict,
    example_to_dict,
    load_json,
    load_jsonl,
    narrative_to_dict,
    prediction_from_dict,
    prediction_to_dict,
    read_code_set,
    read_visits_csv,
    save_json,
    save_jsonl,
)
from .metrics import (
    ConfusionMatrix,
    evaluate,
    metrics as compute_metrics,
    metricset_from_dict,
    metricset_to_dict,
    report,
)
from .narrative import load_template, narrate_examples
from .prompts import PromptTemplates, build_predictor_prompt, sample_exemplars
from .synth import generate, synth_spec_from_dict, write_generated
from .vocab import FallbackPolicy, load_vocab

logger = logging.getLogger("ehr_coagent")

PREDICT_MODES = {
    "zeroshot": {},
    "zeroshot-plus": {
        "use_cot": True,
        "use_factor_interactions": True,
        "use_prevalence": True,
    },
    "fewshot": {"few_shot_n": 6},
}


class UsageError(Exception):
    """Raised by the parser instead of exiting, so main() owns exit codes."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Shared helpers


def _setup_logging(verbosity: str) -> None:
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
    }.get(verbosity, logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")


def _load_cohort(path: str | Path) -> list[CohortExample]:
    return load_jsonl(path, example_from_dict)


def _narratives_for(config: AppConfig, examples: list[CohortExample]):
    name_map = load_vocab(config.require_path("vocab"), config.fallback_policy)
    template_path = config.path("templates")
    template = None
    if template_path is not None:
        narrative_template = template_path / "narrative.json"
        if narrative_template.is_file():
            template = load_template(narrative_template)
    return narrate_examples(examples, name_map, template)


def _split_from_config(config: AppConfig, examples: list[CohortExample]):
    return split_cohort(
        examples,
        config.split.fractions,
        seed=config.seed,
        group_by_patient=config.split.group_by_patient,
    )


def _write_manifest(out_dir: Path, command: str, config_payload: dict, seeds: dict) -> None:
    now = datetime.datetime.now(datetime.timezone.utc).isoformat()
    manifest = manifest_for_run(
        {"command": command, **config_payload},
        seeds,
        timestamps={"started": now, "finished": now},
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_json(manifest, out_dir / "manifest.json")


def _prevalence_of(examples: list[CohortExample]) -> float:
    return sum(1 for ex in examples if ex.label == POSITIVE) / len(examples)


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_synth(args) -> int:
    payload = load_json(args.spec)
    spec = synth_spec_from_dict(payload)
    data = generate(spec)
    out = Path(args.out)
    write_generated(data, out)
    report_obj = validate_cohort(data.cohort)
    if report_obj.errors:
        raise ConfigError(f"generated cohort failed validation: {report_obj.errors[:3]}")
    _write_manifest(out, "synth", {"spec": data.manifest["spec"]}, {"seed": spec.seed})
    print(f"wrote {len(data.cohort)} examples to {out}")
    return 0


def _cmd_cohort_build(args) -> int:
    visits = read_visits_csv(args.visits)
    store = VisitStore.from_visits(visits)
    target_codes = read_code_set(args.target_codes)
    mode = CohortMode.ADJACENT_PAIRS if args.mode == "adjacent" else CohortMode.INDEX_ENCOUNTER
    spec = CohortSpec(
        mode=mode,
        target_codes=target_codes,
        horizon_days=args.horizon_days,
        seed=args.seed,
        task_id=args.task_id,
    )
    if mode is CohortMode.ADJACENT_PAIRS:
        examples = build_adjacent_pairs(store, spec)
        counts = None
    else:
        if not args.inclusion_codes:
            raise ConfigError("index mode needs --inclusion-codes")
        counts = ExclusionCounts()
        examples = build_index_cohort(
            store,
            spec,
            inclusion_codes=read_code_set(args.inclusion_codes),
            counts_out=counts,
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(examples, out, example_to_dict)
    n_pos = sum(1 for ex in examples if ex.label == POSITIVE)
    print(f"built {len(examples)} examples ({n_pos} positive) -> {out}")
    if counts is not None:
        print(
            "excluded: "
            f"no_qualifying_visit={counts.no_qualifying_visit} "
            f"fewer_than_two_visits={counts.fewer_than_two_visits} "
            f"short_record_span={counts.short_record_span} "
            f"target_history={counts.target_history}"
        )
    return 0


def _cmd_cohort_split(args) -> int:
    examples = _load_cohort(args.cohort)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    if len(fractions) != 3:
        raise ConfigError("--fractions must be three comma-separated numbers")
    train, calibration, test = split_cohort(
        examples, fractions, seed=args.seed, group_by_patient=args.group_by_patient
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, bucket in (("train", train), ("calibration", calibration), ("test", test)):
        save_jsonl(bucket, out / f"{name}.jsonl", example_to_dict)
    print(f"split {len(examples)} -> {len(train)}/{len(calibration)}/{len(test)} in {out}")
    return 0


def _cmd_narrate(args) -> int:
    examples = _load_cohort(args.cohort)
    name_map = load_vocab(args.vocab, FallbackPolicy(args.fallback))
    template = load_template(args.template) if args.template else None
    narratives = narrate_examples(examples, name_map, template)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ordered = [narratives[ex.example_id] for ex in examples]
    save_jsonl(ordered, out, narrative_to_dict)
    print(f"narrated {len(ordered)} examples -> {out}")
    return 0


def _cmd_prompt_preview(args) -> int:
    config = load_app_config(args.config)
    _setup_logging(config.verbosity)
    examples = _load_cohort(config.require_path("cohort"))
    narratives = _narratives_for(config, examples)
    if args.example not in narratives:
        raise ConfigError(f"example {args.example!r} is not in the cohort")
    prompt_config = config.run_config.prompt_config
    exemplars = ()
    prevalence = None
    if prompt_config.few_shot_n > 0 or prompt_config.use_prevalence:
        train, _, _ = _split_from_config(config, examples)
        if prompt_config.use_prevalence:
            prevalence = _prevalence_of(train)
        if prompt_config.few_shot_n > 0:
            half = prompt_config.few_shot_n // 2
            exemplars = sample_exemplars(train, narratives, half, half, seed=config.seed)
    templates = None
    templates_dir = config.path("templates")
    if templates_dir is not None:
        templates = PromptTemplates.from_dir(templates_dir)
    prompt = build_predictor_prompt(
        narratives[args.example],
        prompt_config,
        exemplars=exemplars,
        prevalence=prevalence,
        templates=templates,
    )
    print(prompt.text, end="")
    return 0


def _cmd_predict(args) -> int:
    config = load_app_config(args.config)
    _setup_logging(config.verbosity)
    mode_overrides = PREDICT_MODES[args.mode]
    base = run_config_to_dict(config.run_config)["prompt_config"]
    base.update(mode_overrides)
    prompt_config = prompt_config_from_dict(base)
    run_config = replace(config.run_config, prompt_config=prompt_config)

    examples = _load_cohort(config.require_path("cohort"))
    narratives = _narratives_for(config, examples)
    train, _, test = _split_from_config(config, examples)
    backends = make_backends(config)

    exemplars = ()
    if prompt_config.few_shot_n > 0:
        half = prompt_config.few_shot_n // 2
        exemplars = sample_exemplars(train, narratives, half, half, seed=config.seed)
    prevalence = _prevalence_of(train) if prompt_config.use_prevalence else None

    records = run_predictor(
        test,
        narratives,
        run_config,
        backends,
        exemplars=exemplars,
        instructions=None,
        prevalence=prevalence,
    )
    metric_set = evaluate(records, {ex.example_id: ex.label for ex in test})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_jsonl(records, out / "predictions", prediction_to_dict)
    save_json(metricset_to_dict(metric_set), out / "metrics")
    merged = {
        "app": config.raw,
        "mode": args.mode,
        "run_config": run_config_to_dict(run_config),
    }
    _write_manifest(out, "predict", merged, {"seed": config.seed})
    print(report([(args.mode, metric_set)]).text, end="")
    return 0


def _cmd_coagent(args) -> int:
    config = load_app_config(args.config)
    _setup_logging(config.verbosity)
    examples = _load_cohort(config.require_path("cohort"))
    narratives = _narratives_for(config, examples)
    train, calibration, test = _split_from_config(config, examples)
    backends = make_backends(config)
    out = Path(args.out)

    result = run_coagent(
        train,
        calibration,
        test,
        config.run_config,
        backends,
        narratives,
        out_dir=out,
    )
    violations = leakage_report(result.rounds, result.exemplar_ids, test, narratives)
    if violations:
        raise ConfigError(f"test-set isolation violated: {violations[:3]}")
    merged = {"app": config.raw, "run_config": run_config_to_dict(config.run_config)}
    _write_manifest(out, "coagent", merged, {"seed": config.seed})

    rows = [
        (f"round-{artifact.round}", artifact.calibration_metrics)
        for artifact in result.rounds
    ]
    rows.append(("test", result.test_metrics))
    print(report(rows).text, end="")
    return 0


def _cmd_baseline_train(args) -> int:
    examples = _load_cohort(args.cohort)
    universe = bl.code_universe_from_examples(examples)
    features = bl.featurize(examples, universe)
    hyper = None
    if args.kind == "tree":
        hyper = bl.TreeHyper(seed=args.seed)
    elif args.kind == "logreg":
        hyper = bl.LogRegHyper(seed=args.seed)
    elif args.kind == "forest":
        hyper = bl.ForestHyper(seed=args.seed)
    if args.mode == "full":
        model = bl.train_model(args.kind, features.X, features.y, hyper)
    else:
        model = bl.few_shot_fit(args.kind, features, n=args.fewshot_n, seed=args.seed, hyper=hyper)
    accuracy = bl.accuracy_score(model, features.X, features.y)
    payload = bl.model_to_dict(model)
    payload["meta"]["mode"] = args.mode
    payload["meta"]["train_accuracy"] = accuracy
    payload["meta"]["columns"] = [
        f"{code.system.value}|{code.code}|{code.category.value}" for code in universe
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_json(payload, out)
    print(f"trained {args.kind} ({args.mode}) train-accuracy={accuracy:.4f} -> {out}")
    return 0


def _universe_from_columns(columns: list[str]):
    universe = []
    for entry in columns:
        system, code, category = entry.split("|")
        universe.append(MedicalCode(system, code, category))
    return universe


def _cmd_baseline_eval(args) -> int:
    payload = load_json(args.model)
    model = bl.model_from_dict(payload)
    columns = payload.get("meta", {}).get("columns")
    if not columns:
        raise ConfigError(f"model file {args.model} has no stored feature columns")
    universe = _universe_from_columns(columns)
    examples = _load_cohort(args.cohort)
    features = bl.featurize(examples, universe)
    probabilities = model.predict_proba(features.X)
    predicted = (probabilities >= 0.5).astype(int)
    tp = int(((predicted == 1) & (features.y == 1)).sum())
    fp = int(((predicted == 1) & (features.y == 0)).sum())
    fn = int(((predicted == 0) & (features.y == 1)).sum())
    tn = int(((predicted == 0) & (features.y == 0)).sum())
    metric_set = compute_metrics(ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn))
    print(json.dumps(metricset_to_dict(metric_set), indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_json(metricset_to_dict(metric_set), out / "metrics")
    return 0


def _cmd_eval(args) -> int:
    predictions = load_jsonl(args.predictions, prediction_from_dict)
    examples = _load_cohort(args.cohort)
    truth = {ex.example_id: ex.label for ex in examples}
    metric_set = evaluate(predictions, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_json(metricset_to_dict(metric_set), out / "metrics")
    table = report([(args.label, metric_set)])
    (out / "table.csv").write_text(table.csv, encoding="utf-8")
    print(table.text, end="")
    return 0


def _cmd_report(args) -> int:
    rows = []
    for entry in args.run:
        label, _, path = entry.partition("=")
        if not path:
            raise ConfigError(f"--run expects label=path, got {entry!r}")
        payload = load_json(path)
        if "test" in payload and isinstance(payload["test"], dict):
            payload = payload["test"]
        rows.append((label, metricset_from_dict(payload)))
    table = report(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.csv").write_text(table.csv, encoding="utf-8")
        (out / "table.txt").write_text(table.text, encoding="utf-8")
    print(table.text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ehr-coagent", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate synthetic data")
    synth_sub = p.add_subparsers(dest="subcommand", required=True)
    g = synth_sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--spec", required=True, help="JSON spec file")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=_cmd_synth)

    p = sub.add_parser("cohort", help="build or split cohorts")
    cohort_sub = p.add_subparsers(dest="subcommand", required=True)
    b = cohort_sub.add_parser("build", help="build a cohort from visits")
    b.add_argument("--visits", required=True)
    b.add_argument("--mode", choices=["adjacent", "index"], required=True)
    b.add_argument("--target-codes", required=True, help="CSV of target codes")
    b.add_argument("--inclusion-codes", default=None)
    b.add_argument("--horizon-days", type=int, default=365)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--task-id", default="")
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_cohort_build)
    s = cohort_sub.add_parser("split", help="split a cohort into train/calibration/test")
    s.add_argument("--cohort", required=True)
    s.add_argument("--fractions", default="0.4,0.3,0.3")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--group-by-patient", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_cohort_split)

    p = sub.add_parser("narrate", help="render visit narratives")
    p.add_argument("--cohort", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--template", default=None)
    p.add_argument(
        "--fallback",
        choices=[policy.value for policy in FallbackPolicy],
        default=FallbackPolicy.RAW_CODE.value,
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_narrate)

    p = sub.add_parser("prompt", help="inspect prompts")
    prompt_sub = p.add_subparsers(dest="subcommand", required=True)
    v = prompt_sub.add_parser("preview", help="print the exact predictor prompt")
    v.add_argument("--example", required=True)
    v.add_argument("--config", required=True)
    v.set_defaults(func=_cmd_prompt_preview)

    p = sub.add_parser("predict", help="single-agent prediction on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=sorted(PREDICT_MODES), default="zeroshot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("coagent", help="run the predictor/critic loop")
    coagent_sub = p.add_subparsers(dest="subcommand", required=True)
    r = coagent_sub.add_parser("run", help="full co-agent run")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_coagent)

    p = sub.add_parser("baseline", help="classical ML baselines")
    baseline_sub = p.add_subparsers(dest="subcommand", required=True)
    t = baseline_sub.add_parser("train", help="train a baseline model")
    t.add_argument("--kind", choices=list(bl.MODEL_KINDS), required=True)
    t.add_argument("--mode", choices=["full", "fewshot"], default="full")
    t.add_argument("--fewshot-n", type=int, default=6)
    t.add_argument("--cohort", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_cmd_baseline_train)
    e = baseline_sub.add_parser("eval", help="evaluate a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--cohort", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=_cmd_baseline_eval)

    p = sub.add_parser("eval", help="score a predictions file against a cohort")
    p.add_argument("--predictions", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--label", default="run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="cross-run comparison table")
    p.add_argument("--run", action="append", required=True, help="label=metrics-file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CoAgentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
