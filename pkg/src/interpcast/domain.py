"""Value types for every artifact that flows through the pipeline.

All types are frozen dataclasses. ``to_dict``/``from_dict`` give the canonical
JSON form (declared field order, UTF-8, no ASCII escaping) which is also what
checkpoints hash, so two equal values always produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import re
import types
import typing
from dataclasses import dataclass
from typing import Any, Union


class Language(str, enum.Enum):
    ZH = "zh"
    EN = "en"


class Flag(str, enum.Enum):
    YES = "Yes"
    NO = "No"


class Status(str, enum.Enum):
    IN_REVIEW = "in_review"
    ACCEPTED = "accepted"
    ACCEPTED_WITH_WARNINGS = "accepted_with_warnings"


_YES = {"yes", "y", "true", "是", "是的", "通过"}
_NO = {"no", "n", "false", "否", "不", "不是", "未通过"}


def normalize_flag(value: Any) -> Flag:
    """Map loose LLM spellings (``yes``, ``YES``, ``是``, ``True``) to a :class:`Flag`."""
    if isinstance(value, Flag):
        return value
    if isinstance(value, bool):
        return Flag.YES if value else Flag.NO
    if isinstance(value, str):
        key = value.strip().strip("\"'。.!！").lower()
        if key in _YES:
            return Flag.YES
        if key in _NO:
            return Flag.NO
    raise ValueError(f"not a Yes/No flag: {value!r}")


def normalize_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return normalize_flag(value) is Flag.YES


# ---------------------------------------------------------------------------
# artifacts


@dataclass(frozen=True)
class Chapter:
    book_id: str
    chapter_id: str
    title: str
    body: str
    language: Language = Language.EN


@dataclass(frozen=True)
class Topic:
    index: int
    statement: str


@dataclass(frozen=True)
class CaseSketch:
    topic_index: int
    text: str


@dataclass(frozen=True)
class TopicCaseSet:
    topics: tuple[Topic, ...]
    cases: tuple[CaseSketch, ...]

    def topic(self, index: int) -> Topic:
        for t in self.topics:
            if t.index == index:
                return t
        raise KeyError(index)

    def case(self, index: int) -> CaseSketch:
        for c in self.cases:
            if c.topic_index == index:
                return c
        raise KeyError(index)


@dataclass(frozen=True)
class PairVerdict:
    topic_index: int
    valid: bool
    reasons: str = ""


@dataclass(frozen=True)
class PairVerdicts:
    verdicts: tuple[PairVerdict, ...]


@dataclass(frozen=True)
class EnrichedCase:
    topic_index: int
    text: str
    added_background: str = ""


@dataclass(frozen=True)
class EnrichedCases:
    cases: tuple[EnrichedCase, ...]


@dataclass(frozen=True)
class Expansion:
    topic_index: int
    text: str


@dataclass(frozen=True)
class Argument:
    topic_index: int
    text: str


@dataclass(frozen=True)
class SegmentText:
    """Bare per-topic text as returned by the editor and narrator."""

    topic_index: int
    text: str


@dataclass(frozen=True)
class ManuscriptText:
    text: str


@dataclass(frozen=True)
class TopicDraft:
    topic_index: int
    text: str
    round: int = 0
    status: Status = Status.IN_REVIEW


@dataclass(frozen=True)
class DraftFeedback:
    compt: Flag
    log: Flag
    suggestions: str = ""

    @property
    def passed(self) -> bool:
        return self.compt is Flag.YES and self.log is Flag.YES


@dataclass(frozen=True)
class OralScript:
    topic_index: int
    text: str
    round: int = 0
    status: Status = Status.IN_REVIEW


@dataclass(frozen=True)
class OralFeedback:
    natural: Flag
    fluent: Flag
    suggestions: str = ""

    @property
    def passed(self) -> bool:
        return self.natural is Flag.YES and self.fluent is Flag.YES


@dataclass(frozen=True)
class Manuscript:
    text: str
    included: tuple[int, ...] = ()
    round: int = 0
    status: Status = Status.IN_REVIEW


@dataclass(frozen=True)
class ManuscriptFeedback:
    coherent: Flag
    fluent: Flag
    natural: Flag
    suggestions: str = ""

    @property
    def passed(self) -> bool:
        return self.coherent is Flag.YES and self.fluent is Flag.YES and self.natural is Flag.YES


@dataclass(frozen=True)
class PipelineConfig:
    i_max: int = 3
    temperature: float = 1.3
    max_tokens: int = 8192
    model: str = "deepseek-chat"
    parse_retries: int = 2
    topic_cap: int = 3
    prompt_language: Language = Language.EN
    max_chapter_chars: int = 60000
    tts_chunk_chars: int = 500
    sample_rate_hz: int = 44100
    gap_ms: int = 300
    tone_ms_per_char: int = 10
    intro_path: str = ""
    outro_path: str = ""

    def replace(self, **changes: Any) -> PipelineConfig:
        return dataclasses.replace(self, **changes)


Feedback = Union[DraftFeedback, OralFeedback, ManuscriptFeedback]

ARTIFACT_TYPES: dict[str, type] = {
    cls.__name__: cls
    for cls in (
        Chapter, Topic, CaseSketch, TopicCaseSet, PairVerdict, PairVerdicts,
        EnrichedCase, EnrichedCases, Expansion, Argument, SegmentText,
        ManuscriptText, TopicDraft, DraftFeedback, OralScript, OralFeedback,
        Manuscript, ManuscriptFeedback, PipelineConfig,
    )
}


# ---------------------------------------------------------------------------
# canonical serialization

_FLAG_FIELDS = {"compt", "log", "natural", "fluent", "coherent"}


def to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _hints(cls: type) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _convert(tp: Any, value: Any, name: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is tuple:
        (inner, _ellipsis) = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"{name}: expected a list, got {type(value).__name__}")
        return tuple(_convert(inner, v, name) for v in value)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value)
    if tp is Flag:
        return normalize_flag(value)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(value)
    if tp is bool:
        return normalize_bool(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, str) and value.strip().lstrip("-").isdigit():
                return int(value)
            raise TypeError(f"{name}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise TypeError(f"{name}: expected a string, got {type(value).__name__}")
        return value
    return value


def from_dict(cls: type, data: Any) -> Any:
    """Build ``cls`` from its canonical dict; unknown keys are ignored."""
    if not isinstance(data, dict):
        raise TypeError(f"{cls.__name__}: expected an object, got {type(data).__name__}")
    hints = _hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise KeyError(f"{cls.__name__}: missing field {f.name!r}")
            continue
        kwargs[f.name] = _convert(hints[f.name], data[f.name], f"{cls.__name__}.{f.name}")
    return cls(**kwargs)


def canonical_json(obj: Any) -> str:
    return json.dumps(to_dict(obj), ensure_ascii=False, indent=2) + "\n"


def to_json(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")


def from_json(cls: type, raw: bytes | str) -> Any:
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    return from_dict(cls, json.loads(raw))


# ---------------------------------------------------------------------------
# JSON schema generation


def _schema_for_type(tp: Any) -> dict[str, Any]:
    origin = typing.get_origin(tp)
    if origin is tuple:
        (inner, _ellipsis) = typing.get_args(tp)
        return {"type": "array", "items": _schema_for_type(inner)}
    if dataclasses.is_dataclass(tp):
        return json_schema(tp, top_level=False)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return {"type": "string", "enum": [m.value for m in tp]}
    if origin in (Union, types.UnionType):
        return {"anyOf": [_schema_for_type(a) for a in typing.get_args(tp)]}
    mapping = {str: "string", int: "integer", float: "number", bool: "boolean"}
    return {"type": mapping[tp]}


def json_schema(cls: type, top_level: bool = True) -> dict[str, Any]:
    """JSON Schema (draft 2020-12) for a dataclass, fields in declared order."""
    hints = _hints(cls)
    props = {}
    required = []
    for f in dataclasses.fields(cls):
        props[f.name] = _schema_for_type(hints[f.name])
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            required.append(f.name)
    schema: dict[str, Any] = {}
    if top_level:
        schema["$schema"] = "https://json-schema.org/draft/2020-12/schema"
        schema["title"] = cls.__name__
    schema.update({"type": "object", "properties": props, "required": required})
    return schema


def prepare_loose(cls: type, data: Any) -> Any:
    """Normalize flag spellings inside raw LLM JSON so strict schemas accept it."""
    if not isinstance(data, dict) or not dataclasses.is_dataclass(cls):
        return data
    hints = _hints(cls)
    out = dict(data)
    for f in dataclasses.fields(cls):
        if f.name not in out:
            continue
        tp = hints[f.name]
        value = out[f.name]
        try:
            if tp is Flag:
                out[f.name] = normalize_flag(value).value
            elif tp is bool and not isinstance(value, bool):
                out[f.name] = normalize_bool(value)
            elif tp is int and isinstance(value, str) and value.strip().isdigit():
                out[f.name] = int(value)
        except ValueError:
            pass
        if typing.get_origin(tp) is tuple and isinstance(value, list):
            (inner, _ellipsis) = typing.get_args(tp)
            out[f.name] = [prepare_loose(inner, v) for v in value]
    return out


# ---------------------------------------------------------------------------
# validation

ValidationReport = list


def _blank(text: Any) -> bool:
    return not isinstance(text, str) or not text.strip()


def _check_flags_feedback(fb: Any, names: tuple[str, ...]) -> list[str]:
    out = []
    flags = []
    for n in names:
        v = getattr(fb, n)
        if not isinstance(v, Flag):
            out.append(f"{n} must be Yes or No")
        flags.append(v)
    passed = all(v is Flag.YES for v in flags)
    sugg = fb.suggestions if isinstance(fb.suggestions, str) else ""
    if passed and sugg.strip():
        out.append("suggestions must be empty on pass")
    if not passed and not sugg.strip():
        out.append("suggestions required when any criterion is No")
    return out


def _check_round(obj: Any, cfg: PipelineConfig) -> list[str]:
    out = []
    if not isinstance(obj.round, int) or obj.round < 0:
        out.append("round must be a non-negative integer")
    elif obj.round > cfg.i_max:
        out.append(f"round {obj.round} exceeds i_max {cfg.i_max}")
    if not isinstance(obj.status, Status):
        out.append("status must be one of in_review, accepted, accepted_with_warnings")
    return out


def _validate(obj: Any, cfg: PipelineConfig) -> list[str]:
    v: list[str] = []
    if isinstance(obj, Chapter):
        if _blank(re.sub(r"\s+", " ", obj.body or "")):
            v.append("chapter body is empty")
        elif len(obj.body) > cfg.max_chapter_chars:
            v.append(f"chapter body longer than max_chapter_chars ({cfg.max_chapter_chars})")
        if _blank(obj.chapter_id):
            v.append("chapter_id is empty")
    elif isinstance(obj, TopicCaseSet):
        n = len(obj.topics)
        if not 1 <= n <= cfg.topic_cap:
            v.append(f"topic count out of range [1,{cfg.topic_cap}]")
        if len(obj.cases) != n:
            v.append(f"case count {len(obj.cases)} does not match topic count {n}")
        if [t.index for t in obj.topics] != list(range(1, n + 1)):
            v.append("topic indices must be 1..n with no gaps")
        for k, (t, c) in enumerate(zip(obj.topics, obj.cases), start=1):
            if c.topic_index != t.index:
                v.append(f"case {k} topic_index {c.topic_index} does not match topic {t.index}")
            if _blank(t.statement):
                v.append(f"topic {t.index} statement is empty")
            if _blank(c.text):
                v.append(f"case for topic {c.topic_index} is empty")
    elif isinstance(obj, PairVerdicts):
        seen = [x.topic_index for x in obj.verdicts]
        if len(seen) != len(set(seen)):
            v.append("duplicate verdict topic_index")
        for x in obj.verdicts:
            v.extend(_validate(x, cfg))
    elif isinstance(obj, PairVerdict):
        if not isinstance(obj.valid, bool):
            v.append("valid must be a boolean")
        elif not obj.valid and _blank(obj.reasons):
            v.append(f"invalid verdict for topic {obj.topic_index} needs reasons")
    elif isinstance(obj, EnrichedCases):
        seen = [x.topic_index for x in obj.cases]
        if len(seen) != len(set(seen)):
            v.append("duplicate enriched case topic_index")
        for x in obj.cases:
            v.extend(_validate(x, cfg))
    elif isinstance(obj, (EnrichedCase, Expansion, Argument, SegmentText)):
        if _blank(obj.text):
            v.append(f"{type(obj).__name__} text is empty")
    elif isinstance(obj, ManuscriptText):
        if _blank(obj.text):
            v.append("manuscript text is empty")
    elif isinstance(obj, (TopicDraft, OralScript)):
        if _blank(obj.text):
            v.append(f"{type(obj).__name__} text is empty")
        v.extend(_check_round(obj, cfg))
        if obj.status is Status.ACCEPTED_WITH_WARNINGS and obj.round != cfg.i_max:
            v.append("accepted_with_warnings requires round == i_max")
    elif isinstance(obj, Manuscript):
        if _blank(obj.text):
            v.append("manuscript text is empty")
        v.extend(_check_round(obj, cfg))
        if len(obj.included) != len(set(obj.included)):
            v.append("included contains duplicates")
    elif isinstance(obj, DraftFeedback):
        v.extend(_check_flags_feedback(obj, ("compt", "log")))
    elif isinstance(obj, OralFeedback):
        v.extend(_check_flags_feedback(obj, ("natural", "fluent")))
    elif isinstance(obj, ManuscriptFeedback):
        v.extend(_check_flags_feedback(obj, ("coherent", "fluent", "natural")))
    elif isinstance(obj, PipelineConfig):
        if obj.i_max < 0:
            v.append("i_max must be >= 0")
        if obj.parse_retries < 0:
            v.append("parse_retries must be >= 0")
        if obj.topic_cap < 1:
            v.append("topic_cap must be >= 1")
        if obj.tts_chunk_chars < 1:
            v.append("tts_chunk_chars must be >= 1")
        if obj.sample_rate_hz <= 0:
            v.append("sample_rate_hz must be > 0")
        if obj.gap_ms < 0:
            v.append("gap_ms must be >= 0")
    return v


def validate(artifact: Any, cfg: PipelineConfig | None = None) -> ValidationReport:
    """Return every violated invariant of ``artifact``; empty means valid.

    Never raises: a structurally broken value is reported as a violation.
    """
    try:
        return _validate(artifact, cfg or PipelineConfig())
    except Exception as exc:  # noqa: BLE001
        return [f"malformed {type(artifact).__name__}: {exc}"]
