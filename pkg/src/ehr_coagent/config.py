"""Declarative application configuration for CLI runs.

One JSON file fully captures a run: input paths, one backend per agent
role, split fractions, and every loop parameter.  Referenced input paths
are checked eagerly at load time so a run fails before any work starts.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .engine import AgentBackends, RunConfig
from .errors import ConfigError
from .gateway import (
    ENV_CACHE_DIR,
    HttpBackend,
    MockBackend,
    MockScript,
    ResponseCache,
    RetryPolicy,
)
from .prompts import PromptConfig, PromptTemplates
from .vocab import FallbackPolicy

AGENT_ROLES = ("predictor", "critic", "consolidator")

# Input paths are validated eagerly; output/cache paths are created lazily.
_INPUT_PATH_KEYS = ("visits", "vocab", "phenotype", "templates", "cohort")
_KNOWN_PATH_KEYS = _INPUT_PATH_KEYS + ("cache_dir",)


@dataclass(frozen=True)
class BackendSpec:
    """Where one agent role's completions come from."""

    kind: str
    script: str | None = None
    base_url: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"backend kind must be mock or http, got {self.kind!r}")
        if self.kind == "mock" and not self.script:
            raise ConfigError("mock backend needs a script path")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.4
    calibration: float = 0.3
    test: float = 0.3
    group_by_patient: bool = False

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.calibration, self.test)


@dataclass
class AppConfig:
    """Parsed and validated application configuration."""

    seed: int = 0
    verbosity: str = "info"
    paths: dict[str, str | None] = field(default_factory=dict)
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    run_config: RunConfig = field(default_factory=RunConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    fallback_policy: FallbackPolicy = FallbackPolicy.RAW_CODE
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    raw: dict = field(default_factory=dict)

    def path(self, key: str) -> Path | None:
        value = self.paths.get(key)
        return Path(value) if value else None

    def require_path(self, key: str) -> Path:
        got = self.path(key)
        if got is None:
            raise ConfigError(f"config is missing required path {key!r}")
        return got


def prompt_config_from_dict(payload: dict) -> PromptConfig:
    kwargs = {}
    for key in (
        "use_cot",
        "use_factor_interactions",
        "use_prevalence",
        "few_shot_n",
        "include_exemplar_reasoning",
        "task_description",
        "answer_format_clause",
    ):
        if key in payload:
            kwargs[key] = payload[key]
    return PromptConfig(**kwargs)


def run_config_from_dict(payload: dict) -> RunConfig:
    kwargs = {}
    for key in (
        "predictor_model",
        "critic_model",
        "consolidator_model",
        "batch_size_b",
        "num_batches_m",
        "rounds",
        "seed",
        "max_instructions_k",
        "failure_ceiling",
        "temperature",
        "max_tokens",
    ):
        if key in payload:
            kwargs[key] = payload[key]
    if "prompt_config" in payload:
        kwargs["prompt_config"] = prompt_config_from_dict(payload["prompt_config"])
    return RunConfig(**kwargs)


def _backend_spec_from_dict(role: str, payload: dict) -> BackendSpec:
    if not isinstance(payload, dict):
        raise ConfigError(f"backend entry for {role!r} must be an object")
    return BackendSpec(
        kind=payload.get("kind", ""),
        script=payload.get("script"),
        base_url=payload.get("base_url"),
    )


def app_config_from_dict(payload: dict, base_dir: Path | None = None) -> AppConfig:
    """Build an AppConfig, resolving relative paths against ``base_dir``."""
    base = base_dir or Path(".")

    paths: dict[str, str | None] = {}
    for key, value in payload.get("paths", {}).items():
        if key not in _KNOWN_PATH_KEYS:
            raise ConfigError(f"unknown path key {key!r} in config")
        paths[key] = str(base / value) if value else None

    backends = {}
    for role, entry in payload.get("backends", {}).items():
        if role not in AGENT_ROLES:
            raise ConfigError(f"unknown agent role {role!r} in config")
        spec = _backend_spec_from_dict(role, entry)
        if spec.script:
            spec = BackendSpec(
                kind=spec.kind, script=str(base / spec.script), base_url=spec.base_url
            )
        backends[role] = spec

    fallback = payload.get("name_fallback", FallbackPolicy.RAW_CODE.value)
    try:
        fallback_policy = FallbackPolicy(fallback)
    except ValueError as exc:
        raise ConfigError(f"unknown name_fallback {fallback!r}") from exc

    split_payload = payload.get("split", {})
    split = SplitSpec(
        train=float(split_payload.get("train", 0.4)),
        calibration=float(split_payload.get("calibration", 0.3)),
        test=float(split_payload.get("test", 0.3)),
        group_by_patient=bool(split_payload.get("group_by_patient", False)),
    )

    retry_payload = payload.get("retry", {})
    retry = RetryPolicy(
        attempts=int(retry_payload.get("attempts", 5)),
        base_delay=float(retry_payload.get("base_delay", 1.0)),
        max_delay=float(retry_payload.get("max_delay", 30.0)),
        jitter=float(retry_payload.get("jitter", 0.1)),
    )

    config = AppConfig(
        seed=int(payload.get("seed", 0)),
        verbosity=str(payload.get("verbosity", "info")),
        paths=paths,
        backends=backends,
        run_config=run_config_from_dict(payload.get("run", {})),
        split=split,
        fallback_policy=fallback_policy,
        retry=retry,
        raw=payload,
    )
    _validate_eagerly(config)
    return config


def _validate_eagerly(config: AppConfig) -> None:
    for key in _INPUT_PATH_KEYS:
        value = config.paths.get(key)
        if value and not Path(value).exists():
            raise ConfigError(f"configured path {key!r} does not exist: {value}")
    for role, spec in config.backends.items():
        if spec.script and not Path(spec.script).is_file():
            raise ConfigError(
                f"mock script for role {role!r} does not exist: {spec.script}"
            )


def load_app_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return app_config_from_dict(payload, base_dir=path.parent)


def make_backends(config: AppConfig, sleep=time.sleep) -> AgentBackends:
    """Instantiate one backend per agent role plus cache and templates.

    Roles sharing a mock script share one backend instance, so scripted
    failure budgets behave as a single simulated service.
    """
    for role in AGENT_ROLES:
        if role not in config.backends:
            raise ConfigError(f"config has no backend for agent role {role!r}")

    mock_instances: dict[str, MockBackend] = {}

    def build(role: str):
        spec = config.backends[role]
        if spec.kind == "mock":
            assert spec.script is not None
            if spec.script not in mock_instances:
                mock_instances[spec.script] = MockBackend(
                    MockScript.from_jsonl(spec.script), backend_id=f"mock:{Path(spec.script).name}"
                )
            return mock_instances[spec.script]
        return HttpBackend(base_url=spec.base_url)

    cache_dir = config.paths.get("cache_dir")
    if cache_dir:
        cache: ResponseCache | None = ResponseCache(cache_dir)
    else:
        cache = ResponseCache.from_env()

    templates = None
    templates_path = config.paths.get("templates")
    if templates_path:
        templates = PromptTemplates.from_dir(templates_path)

    return AgentBackends(
        predictor=build("predictor"),
        critic=build("critic"),
        consolidator=build("consolidator"),
        cache=cache,
        retry=config.retry,
        sleep=sleep,
        templates=templates,
    )


__all__ = [
    "AGENT_ROLES",
    "ENV_CACHE_DIR",
    "AppConfig",
    "BackendSpec",
    "SplitSpec",
    "app_config_from_dict",
    "load_app_config",
    "make_backends",
    "prompt_config_from_dict",
    "run_config_from_dict",
]
