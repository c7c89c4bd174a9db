"""Chat-completion backends with caching, retries, and answer extraction.

Two backends share one interface: an HTTP client for OpenAI-style chat
endpoints and a deterministic scripted mock used for offline runs and tests.
Responses carry optional token log-probabilities at the answer position,
from which :func:`extract_answer` derives a binary label and a normalized
positive-class probability.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, runtime_checkable

from .core import NEGATIVE, label_for_probability
from .errors import (
    BackendError,
    ConfigError,
    FormatError,
    MockScriptMissError,
    ProtocolError,
    TransientBackendError,
)
from .io import dumps_canonical
from .prompts import PromptText

# Extraction modes, in decreasing order of confidence information.
LOGPROB = "logprob"
TEXT_ONLY = "text_only"
FALLBACK = "fallback"

# Fallback probability sits just under the decision threshold so the record
# classifies negative while remaining distinguishable from a confident 0.5.
FALLBACK_EPSILON = 1e-6

ENV_API_BASE = "COAGENT_API_BASE"
ENV_API_KEY = "COAGENT_API_KEY"
ENV_CACHE_DIR = "COAGENT_CACHE_DIR"

_ANSWER_LINE = re.compile(r"^\s*Answer:\s*(Yes|No)\b", re.IGNORECASE)
_BARE_WORD = re.compile(r"\b(Yes|No)\b", re.IGNORECASE)


@dataclass(frozen=True)
class CompletionRequest:
    """One backend call: a prompt plus sampling parameters."""

    model_id: str
    prompt: PromptText
    temperature: float = 0.0
    max_tokens: int = 512
    top_logprobs: int = 5
    seed_hint: int | None = None

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ConfigError("model_id must be nonempty")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.top_logprobs < 0:
            raise ConfigError(f"top_logprobs must be >= 0, got {self.top_logprobs}")


@dataclass(frozen=True)
class CompletionResponse:
    """Backend reply: full text plus token logprobs at the answer position."""

    text: str
    answer_token_logprobs: tuple[tuple[str, float], ...] = ()
    backend_id: str = ""
    cached: bool = False
    attempts: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "answer_token_logprobs",
            tuple((str(tok), float(lp)) for tok, lp in self.answer_token_logprobs),
        )
        for tok, lp in self.answer_token_logprobs:
            if lp > 0.0:
                raise ProtocolError(f"log-probability for {tok!r} is positive: {lp}")
        if self.attempts < 1:
            raise ProtocolError(f"attempts must be >= 1, got {self.attempts}")


@dataclass(frozen=True)
class ExtractedAnswer:
    """Binary decision distilled from one completion."""

    label: str
    p_positive: float
    reasoning: str = ""
    extraction_mode: str = TEXT_ONLY

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_positive <= 1.0:
            raise ProtocolError(f"p_positive out of range: {self.p_positive}")


@runtime_checkable
class Backend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        ...


# ---------------------------------------------------------------------------
# Scripted mock backend


@dataclass
class MockRule:
    """One scripted response rule.

    ``kind`` selects the match mode: "hash" compares against the request's
    prompt hash, "regex" searches the prompt text, "default" always matches.
    ``fail_times`` makes the rule raise a transient error that many times
    before answering, which exercises the retry path.
    """

    kind: str
    pattern: str = ""
    response_text: str = ""
    logprobs: tuple[tuple[str, float], ...] = ()
    fail_times: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("hash", "regex", "default"):
            raise FormatError(f"unknown mock rule kind {self.kind!r}")
        if self.kind in ("hash", "regex") and not self.pattern:
            raise FormatError(f"mock rule of kind {self.kind!r} needs a pattern")
        if self.fail_times < 0:
            raise FormatError(f"fail_times must be >= 0, got {self.fail_times}")
        self.logprobs = tuple((str(t), float(p)) for t, p in self.logprobs)


def _rule_from_dict(payload: dict) -> MockRule:
    return MockRule(
        kind=payload.get("kind", ""),
        pattern=payload.get("pattern", ""),
        response_text=payload.get("response_text", ""),
        logprobs=tuple((t, p) for t, p in payload.get("logprobs", [])),
        fail_times=int(payload.get("fail_times", 0)),
    )


@dataclass
class MockScript:
    """Ordered rule list; hash rules outrank regex rules, default is last."""

    rules: list[MockRule] = field(default_factory=list)

    def __post_init__(self) -> None:
        for rule in self.rules:
            if rule.kind == "regex":
                try:
                    re.compile(rule.pattern)
                except re.error as exc:
                    raise FormatError(
                        f"bad regex in mock rule {rule.pattern!r}: {exc}"
                    ) from exc

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "MockScript":
        rules = []
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    payload = json.loads(line)
                    rules.append(_rule_from_dict(payload))
                except (json.JSONDecodeError, FormatError, TypeError, ValueError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad mock rule: {exc}") from exc
        return cls(rules=rules)


class MockBackend:
    """Deterministic scripted backend.

    Rule precedence on each request: exact prompt-hash match first, then the
    first matching regex rule in script order, then the first default rule.
    A request matching nothing raises a script-miss error naming the prompt
    hash, so an incomplete script can never silently answer.
    """

    def __init__(self, script: MockScript, backend_id: str = "mock") -> None:
        self.script = script
        self.backend_id = backend_id
        self.calls = 0
        # fail_times budgets are consumed per rule across the backend's life.
        self._failures_left = {
            i: rule.fail_times for i, rule in enumerate(script.rules)
        }

    def _match(self, request: CompletionRequest) -> tuple[int, MockRule]:
        for i, rule in enumerate(self.script.rules):
            if rule.kind == "hash" and rule.pattern == request.prompt.prompt_hash:
                return i, rule
        for i, rule in enumerate(self.script.rules):
            if rule.kind == "regex" and re.search(rule.pattern, request.prompt.text):
                return i, rule
        for i, rule in enumerate(self.script.rules):
            if rule.kind == "default":
                return i, rule
        raise MockScriptMissError(
            f"no mock rule matches prompt {request.prompt.prompt_hash}"
        )

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.calls += 1
        index, rule = self._match(request)
        if self._failures_left.get(index, 0) > 0:
            self._failures_left[index] -= 1
            raise TransientBackendError(
                f"scripted transient failure from rule {index} "
                f"({self._failures_left[index]} left)"
            )
        return CompletionResponse(
            text=rule.response_text,
            answer_token_logprobs=rule.logprobs,
            backend_id=self.backend_id,
        )


# ---------------------------------------------------------------------------
# HTTP backend (OpenAI-style chat completions)


class HttpBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Endpoint and credential come from constructor arguments or from the
    COAGENT_API_BASE / COAGENT_API_KEY environment variables.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
        session=None,
    ) -> None:
        self.base_url = (base_url or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        if not self.base_url:
            raise ConfigError(
                f"no API base URL: pass base_url or set {ENV_API_BASE}"
            )
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.backend_id = f"http:{self.base_url}"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import requests

        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.top_logprobs > 0:
            payload["logprobs"] = True
            payload["top_logprobs"] = request.top_logprobs
        if request.seed_hint is not None:
            payload["seed"] = request.seed_hint
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            http_response = self.session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"request failed: {exc}") from exc
        if http_response.status_code == 429 or http_response.status_code >= 500:
            raise TransientBackendError(
                f"backend returned status {http_response.status_code}"
            )
        if http_response.status_code != 200:
            raise BackendError(
                f"backend returned status {http_response.status_code}: "
                f"{http_response.text[:200]}"
            )
        try:
            body = http_response.json()
            choice = body["choices"][0]
            text = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed backend payload: {exc}") from exc
        return CompletionResponse(
            text=text,
            answer_token_logprobs=_answer_logprobs_from_choice(choice),
            backend_id=self.backend_id,
        )


def _answer_logprobs_from_choice(choice: dict) -> tuple[tuple[str, float], ...]:
    """Pull top-k alternatives at the final Yes/No token of a chat choice."""
    content = (choice.get("logprobs") or {}).get("content") or []
    answer_entry = None
    for entry in content:
        token = str(entry.get("token", "")).strip().lower()
        if token in ("yes", "no"):
            answer_entry = entry
    if answer_entry is None:
        return ()
    pairs = []
    for alt in answer_entry.get("top_logprobs", []):
        try:
            pairs.append((str(alt["token"]), float(alt["logprob"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed logprob entry: {exc}") from exc
    return tuple(pairs)


# ---------------------------------------------------------------------------
# Response cache


class ResponseCache:
    """Persistent content-addressed response store.

    Keys hash the request essentials (model id, prompt hash, temperature,
    max tokens); records live one file per request under a per-model
    directory, so cached real-API experiments survive process restarts.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    @classmethod
    def from_env(cls) -> "ResponseCache | None":
        root = os.environ.get(ENV_CACHE_DIR, "")
        return cls(root) if root else None

    @staticmethod
    def key(request: CompletionRequest) -> str:
        digest_input = dumps_canonical(
            {
                "model_id": request.model_id,
                "prompt_hash": request.prompt.prompt_hash,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            }
        )
        return hashlib.sha256(digest_input.encode("utf-8")).hexdigest()

    def _path(self, request: CompletionRequest) -> Path:
        model_dir = re.sub(r"[^A-Za-z0-9._-]", "_", request.model_id)
        return self.root / model_dir / f"{self.key(request)}.json"

    def get(self, request: CompletionRequest) -> CompletionResponse | None:
        path = self._path(request)
        if not path.is_file():
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            stored = payload["response"]
            return CompletionResponse(
                text=stored["text"],
                answer_token_logprobs=tuple(
                    (t, p) for t, p in stored["answer_token_logprobs"]
                ),
                backend_id=stored["backend_id"],
                cached=True,
                attempts=int(stored.get("attempts", 1)),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"corrupt cache record {path}: {exc}") from exc

    def put(self, request: CompletionRequest, response: CompletionResponse) -> None:
        path = self._path(request)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "request": {
                "model_id": request.model_id,
                "prompt_hash": request.prompt.prompt_hash,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            },
            "response": {
                "text": response.text,
                "answer_token_logprobs": [list(p) for p in response.answer_token_logprobs],
                "backend_id": response.backend_id,
                "attempts": response.attempts,
            },
        }
        # Write-then-rename keeps concurrent readers away from partial files.
        tmp = path.with_suffix(".tmp")
        tmp.write_text(dumps_canonical(payload) + "\n", encoding="utf-8")
        tmp.replace(path)


# ---------------------------------------------------------------------------
# Retry orchestration


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff parameters for transient backend failures."""

    attempts: int = 5
    base_delay: float = 1.0
    max_delay: float = 30.0
    jitter: float = 0.1

    def __post_init__(self) -> None:
        if self.attempts < 1:
            raise ConfigError(f"attempts must be >= 1, got {self.attempts}")
        if self.base_delay < 0 or self.max_delay < 0 or self.jitter < 0:
            raise ConfigError("retry delays and jitter must be >= 0")


def complete(
    backend: Backend,
    request: CompletionRequest,
    cache: ResponseCache | None = None,
    policy: RetryPolicy | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> CompletionResponse:
    """Issue one completion with caching and retry.

    A cache hit returns immediately with ``cached=True`` and no backend
    call.  Transient failures back off exponentially (with jitter) up to
    ``policy.attempts`` tries; exhaustion raises a backend error carrying
    the attempt count.  Successful responses record how many attempts they
    took and are written back to the cache.
    """
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            return hit
    policy = policy or RetryPolicy()
    rng = rng or random.Random(0)
    last_error: TransientBackendError | None = None
    for attempt in range(1, policy.attempts + 1):
        try:
            response = backend.complete(request)
        except TransientBackendError as exc:
            last_error = exc
            if attempt < policy.attempts:
                delay = min(policy.max_delay, policy.base_delay * 2 ** (attempt - 1))
                delay *= 1.0 + rng.uniform(0.0, policy.jitter)
                sleep(delay)
            continue
        response = replace(response, attempts=attempt)
        if cache is not None:
            cache.put(request, response)
        return response
    raise BackendError(
        f"backend {backend.backend_id!r} failed after {policy.attempts} attempts: "
        f"{last_error}",
        attempts=policy.attempts,
    )


# ---------------------------------------------------------------------------
# Answer extraction


def _split_reasoning(text: str) -> tuple[str, str | None]:
    """Return (reasoning, answer word) from the final ``Answer:`` line."""
    lines = text.splitlines()
    for i in range(len(lines) - 1, -1, -1):
        match = _ANSWER_LINE.match(lines[i])
        if match:
            reasoning = "\n".join(lines[:i]).strip()
            return reasoning, match.group(1).capitalize()
    return text.strip(), None


def _logprob_masses(
    pairs: Sequence[tuple[str, float]],
) -> tuple[float, float, float]:
    """Sum probability mass over casing/whitespace variants of Yes and No.

    Returns (mass_yes, mass_no, minimum observed single-token probability).
    """
    mass_yes = 0.0
    mass_no = 0.0
    min_seen = math.inf
    for token, logprob in pairs:
        prob = math.exp(logprob)
        min_seen = min(min_seen, prob)
        word = token.strip().lower()
        if word == "yes":
            mass_yes += prob
        elif word == "no":
            mass_no += prob
    return mass_yes, mass_no, min_seen


def extract_answer(response: CompletionResponse) -> ExtractedAnswer:
    """Distill a completion into label, probability, and reasoning.

    Probability source, in order of preference: normalized Yes/No token
    mass from the answer-position logprobs; the answer word alone (p is
    then exactly 0 or 1); and when no decision is recoverable at all, a
    flagged fallback of label=negative with p just under 0.5.  When only
    one of the two tokens shows up in the top list, the missing side is
    floored at the list's minimum observed probability before normalizing.
    """
    reasoning, answer_word = _split_reasoning(response.text)

    if response.answer_token_logprobs:
        mass_yes, mass_no, min_seen = _logprob_masses(response.answer_token_logprobs)
        if mass_yes > 0.0 or mass_no > 0.0:
            if mass_yes == 0.0:
                mass_yes = min_seen
            elif mass_no == 0.0:
                mass_no = min_seen
            p_positive = mass_yes / (mass_yes + mass_no)
            return ExtractedAnswer(
                label=label_for_probability(p_positive),
                p_positive=p_positive,
                reasoning=reasoning,
                extraction_mode=LOGPROB,
            )

    if answer_word is None:
        # No structured answer line; take the last standalone Yes/No word.
        hits = _BARE_WORD.findall(response.text)
        if hits:
            answer_word = hits[-1].capitalize()

    if answer_word is not None:
        p_positive = 1.0 if answer_word == "Yes" else 0.0
        return ExtractedAnswer(
            label=label_for_probability(p_positive),
            p_positive=p_positive,
            reasoning=reasoning,
            extraction_mode=TEXT_ONLY,
        )

    return ExtractedAnswer(
        label=NEGATIVE,
        p_positive=0.5 - FALLBACK_EPSILON,
        reasoning=reasoning,
        extraction_mode=FALLBACK,
    )
