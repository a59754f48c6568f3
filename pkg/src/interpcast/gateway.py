"""Chat-completion access for the agents.

A :class:`Gateway` wraps one provider (a live OpenAI-compatible endpoint or a
:class:`ScriptedProvider`), retries transient transport failures, parses
structured JSON replies and records one trace entry per provider call.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, NamedTuple, Protocol

import httpx
import jsonschema

from . import domain
from .domain import PipelineConfig
from .errors import (
    ParseError,
    PreconditionError,
    RoleMismatch,
    ScriptExhausted,
    TransportError,
    ValidationError,
)
from .trace import ROLE_STAGE, ROLE_TAGS, TraceLog, digest

log = logging.getLogger(__name__)

API_KEY_ENV = "INTERPCAST_API_KEY"
API_BASE_ENV = "INTERPCAST_API_BASE"

# One response schema per agent role.
ROLE_SCHEMA = {
    "TA": "TopicCaseSet",
    "PR1": "PairVerdicts",
    "CA1": "EnrichedCases",
    "CA2": "Expansion",
    "CA3": "Argument",
    "ED1": "DraftText",
    "PR2": "DraftFeedback",
    "NR": "OralText",
    "PR3": "OralFeedback",
    "ED2": "ManuscriptText",
    "PR4": "ManuscriptFeedback",
}

RESPONSE_TYPES: dict[str, type] = {
    "TopicCaseSet": domain.TopicCaseSet,
    "PairVerdicts": domain.PairVerdicts,
    "EnrichedCases": domain.EnrichedCases,
    "Expansion": domain.Expansion,
    "Argument": domain.Argument,
    "DraftText": domain.SegmentText,
    "DraftFeedback": domain.DraftFeedback,
    "OralText": domain.SegmentText,
    "OralFeedback": domain.OralFeedback,
    "ManuscriptText": domain.ManuscriptText,
    "ManuscriptFeedback": domain.ManuscriptFeedback,
}


def response_schema(name: str) -> dict[str, Any]:
    schema = domain.json_schema(RESPONSE_TYPES[name])
    schema["title"] = name
    return schema


_REPAIR = {
    "en": (
        "\n\nYour previous reply could not be accepted: {problems}\n"
        "Reply again with exactly one JSON object that satisfies the schema above "
        "and fixes these problems. Do not add any other text."
    ),
    "zh": (
        "\n\n你上一次的回复未能通过校验：{problems}\n"
        "请重新回复，只输出一个符合上述 JSON Schema 并修正这些问题的 JSON 对象，不要输出其他内容。"
    ),
}


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float
    max_tokens: int
    role_tag: str
    # trace context, never sent on the wire
    topic_index: int | None = None
    round: int = 0

    def __post_init__(self) -> None:
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise PreconditionError("prompts must be non-empty")
        if self.role_tag not in ROLE_TAGS:
            raise PreconditionError(f"unknown role_tag {self.role_tag!r}")

    @property
    def stage(self) -> str:
        return ROLE_STAGE[self.role_tag]

    def payload(self, model: str) -> dict[str, Any]:
        return {
            "model": model,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": self.user_prompt},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider_id: str
    latency_ms: int = 0
    truncated: bool = False


class Provider(Protocol):
    provider_id: str
    # True when responses depend on call order rather than on the request
    ordered: bool

    def send(self, request: ChatRequest, model: str) -> ChatResponse: ...


# ---------------------------------------------------------------------------
# scripted provider


@dataclass(frozen=True)
class ScriptEntry:
    response_text: str
    expected_role_tag: str | None = None


def _entry(item: Any) -> ScriptEntry:
    if isinstance(item, str):
        return ScriptEntry(item)
    role = item.get("expected_role_tag", item.get("role"))
    text = item.get("response_text", item.get("text", item.get("response")))
    if not isinstance(text, str):
        text = json.dumps(text, ensure_ascii=False)
    return ScriptEntry(text, role)


def load_script(data: Any, chapter_id: str | None = None) -> list[ScriptEntry]:
    """Parse a script file body.

    Accepted shapes: a bare list of entries (replayed fresh for every
    chapter), ``{"entries": [...]}``, or ``{"chapters": {chapter_id: [...]}}``.
    """
    if isinstance(data, dict):
        if "chapters" in data:
            chapters = data["chapters"]
            if chapter_id is None or chapter_id not in chapters:
                raise ValueError(f"script has no entries for chapter {chapter_id!r}")
            data = chapters[chapter_id]
        else:
            data = data.get("entries", data.get("script"))
    if not isinstance(data, list):
        raise ValueError("script must be a list of entries")
    return [_entry(x) for x in data]


class ScriptedProvider:
    """Replays a fixed list of responses strictly in order.

    Every payload that would have gone over the wire is kept in ``wire`` so
    tests can inspect exactly what a live endpoint would have received.
    """

    ordered = True

    def __init__(self, entries: list[ScriptEntry] | list[dict] | list[str], provider_id: str = "script") -> None:
        self.entries = [e if isinstance(e, ScriptEntry) else _entry(e) for e in entries]
        self.provider_id = provider_id
        self.cursor = 0
        self.wire: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, chapter_id: str | None = None) -> ScriptedProvider:
        path = Path(path)
        entries = load_script(json.loads(path.read_text(encoding="utf-8")), chapter_id)
        return cls(entries, provider_id=f"script:{path.name}")

    @property
    def remaining(self) -> int:
        return len(self.entries) - self.cursor

    def skip(self, n: int) -> None:
        with self._lock:
            self.cursor = min(len(self.entries), self.cursor + n)

    def send(self, request: ChatRequest, model: str) -> ChatResponse:
        with self._lock:
            if self.cursor >= len(self.entries):
                raise ScriptExhausted(f"script exhausted after {self.cursor} responses (role {request.role_tag})")
            entry = self.entries[self.cursor]
            if entry.expected_role_tag and entry.expected_role_tag != request.role_tag:
                raise RoleMismatch(
                    f"script entry {self.cursor} expects role {entry.expected_role_tag}, got {request.role_tag}"
                )
            self.cursor += 1
            self.wire.append(request.payload(model))
        return ChatResponse(entry.response_text, self.provider_id, 0)


# ---------------------------------------------------------------------------
# live provider


class HttpProvider:
    """OpenAI-compatible ``POST {api_base}/chat/completions`` client."""

    ordered = False

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.api_base = (api_base or os.getenv(API_BASE_ENV) or "https://api.deepseek.com/v1").rstrip("/")
        self.api_key = api_key or os.getenv(API_KEY_ENV)
        if not self.api_key:
            raise PreconditionError(f"{API_KEY_ENV} is required for the live provider")
        self.provider_id = f"http:{self.api_base}"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def send(self, request: ChatRequest, model: str) -> ChatResponse:
        url = f"{self.api_base}/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        body = json.dumps(request.payload(model), ensure_ascii=False).encode("utf-8")
        start = time.monotonic()
        try:
            resp = self._client.post(url, headers=headers, content=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        latency = int((time.monotonic() - start) * 1000)
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            err = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            err.retriable = False
            raise err
        try:
            choice = resp.json()["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {resp.text[:200]}") from exc
        return ChatResponse(text, self.provider_id, latency, truncated=choice.get("finish_reason") == "length")


def open_provider(desc: str, chapter_id: str | None = None) -> Provider:
    """Build a provider from ``live`` or ``script:<path>``."""
    if desc == "live":
        return HttpProvider()
    if desc.startswith("script:"):
        return ScriptedProvider.from_file(desc[len("script:"):], chapter_id)
    raise PreconditionError(f"unknown provider {desc!r} (expected live or script:<path>)")


# ---------------------------------------------------------------------------
# JSON extraction


def extract_json(text: str) -> Any:
    """Return the first top-level JSON object in ``text``.

    Prose and code fences around the object are ignored.
    """
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _end = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    raise ValueError("no JSON object found in response")


class Structured(NamedTuple):
    value: Any
    attempts: int


Check = Callable[[Any], list[str]]


class Gateway:
    def __init__(
        self,
        provider: Provider,
        cfg: PipelineConfig | None = None,
        trace: TraceLog | None = None,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.provider = provider
        self.cfg = cfg or PipelineConfig()
        self.trace = trace if trace is not None else TraceLog()
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._validators: dict[str, jsonschema.Draft202012Validator] = {}

    def request(self, role_tag: str, system_prompt: str, user_prompt: str, **ctx: Any) -> ChatRequest:
        return ChatRequest(
            system_prompt=system_prompt,
            user_prompt=user_prompt,
            temperature=self.cfg.temperature,
            max_tokens=self.cfg.max_tokens,
            role_tag=role_tag,
            **ctx,
        )

    def complete(self, request: ChatRequest, attempt: int = 1) -> ChatResponse:
        """Send one request, retrying transport failures with exponential backoff."""
        req_digest = digest(json.dumps(request.payload(self.cfg.model), ensure_ascii=False, sort_keys=True))
        tries = 0
        while True:
            tries += 1
            try:
                resp = self.provider.send(request, self.cfg.model)
            except TransportError as exc:
                if getattr(exc, "retriable", True) and tries <= self.cfg.parse_retries:
                    wait = self.backoff_s * 2 ** (tries - 1)
                    log.warning("transport failure (%s), retrying in %.1fs", exc, wait)
                    self._sleep(wait)
                    continue
                self._record(request, req_digest, None, attempt, f"TransportError: {exc}")
                raise
            except Exception as exc:
                self._record(request, req_digest, None, attempt, f"{type(exc).__name__}: {exc}")
                raise
            self._record(request, req_digest, digest(resp.text), attempt)
            return resp

    def _record(self, request: ChatRequest, req_digest: str, resp_digest: str | None, attempt: int, error: str | None = None) -> None:
        self.trace.append(
            stage=request.stage,
            role_tag=request.role_tag,
            topic_index=request.topic_index,
            round=request.round,
            request_digest=req_digest,
            response_digest=resp_digest,
            attempts=attempt,
            error=error,
        )

    def _validator(self, schema_name: str) -> jsonschema.Draft202012Validator:
        if schema_name not in self._validators:
            self._validators[schema_name] = jsonschema.Draft202012Validator(response_schema(schema_name))
        return self._validators[schema_name]

    def complete_structured(
        self,
        request: ChatRequest,
        schema_name: str,
        check: Check | None = None,
        exhausted_error: type[ValidationError] = ValidationError,
    ) -> Structured:
        """Ask for ``schema_name`` and parse the reply into its domain type.

        Malformed or invalid replies are re-asked up to ``parse_retries`` times
        with an addendum naming the problems. ``check`` adds caller-specific
        violations (coverage, join keys); if those are what remain after the
        last attempt, ``exhausted_error`` is raised instead of ValidationError.
        """
        if schema_name not in RESPONSE_TYPES:
            raise PreconditionError(f"unknown schema {schema_name!r}")
        cls = RESPONSE_TYPES[schema_name]
        max_attempts = 1 + self.cfg.parse_retries
        repair = _REPAIR[self.cfg.prompt_language.value]
        current = request
        kind, problems = "parse", ["no attempt made"]
        for attempt in range(1, max_attempts + 1):
            resp = self.complete(current, attempt)
            kind, problems, value = self._parse(resp.text, cls, schema_name, check)
            if kind == "ok":
                return Structured(value, attempt)
            log.info("%s attempt %d rejected: %s", request.role_tag, attempt, "; ".join(problems))
            current = replace(request, user_prompt=request.user_prompt + repair.format(problems="; ".join(problems)))
        message = f"{request.role_tag}/{schema_name} failed after {max_attempts} attempts: {'; '.join(problems)}"
        if kind == "parse":
            raise ParseError(message, attempts=max_attempts)
        if kind == "check":
            raise exhausted_error(message, problems, attempts=max_attempts)
        raise ValidationError(message, problems, attempts=max_attempts)

    def _parse(self, text: str, cls: type, schema_name: str, check: Check | None) -> tuple[str, list[str], Any]:
        try:
            raw = extract_json(text)
        except ValueError as exc:
            return "parse", [str(exc)], None
        raw = domain.prepare_loose(cls, raw)
        errors = sorted(self._validator(schema_name).iter_errors(raw), key=lambda e: list(e.path))
        if errors:
            return "invalid", [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors[:5]], None
        try:
            value = domain.from_dict(cls, raw)
        except (KeyError, TypeError, ValueError) as exc:
            return "invalid", [str(exc)], None
        problems = domain.validate(value, self.cfg)
        if problems:
            return "invalid", problems, None
        if check is not None:
            problems = check(value)
            if problems:
                return "check", problems, None
        return "ok", [], value
