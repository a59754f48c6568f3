"""The eleven agent roles.

Each method renders that role's prompt template, asks the gateway for the
role's response schema and turns the reply into a domain artifact. Templates
live in ``prompts/{lang}/{role}.txt`` with a ``[system]`` and a ``[user]``
section.
"""

from __future__ import annotations

import json
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from .domain import (
    Argument,
    Chapter,
    EnrichedCase,
    Expansion,
    Manuscript,
    ManuscriptFeedback,
    OralFeedback,
    OralScript,
    PairVerdict,
    PipelineConfig,
    Status,
    Topic,
    TopicCaseSet,
    TopicDraft,
    DraftFeedback,
    to_dict,
)
from .errors import CoverageError, MissingVerdict, PreconditionError
from .gateway import ROLE_SCHEMA, Gateway, response_schema

TEMPLATE_NAMES = (
    "TA", "PR1", "CA1", "CA2", "CA3", "ED1", "ED1_revise", "PR2",
    "NR", "NR_revise", "PR3", "ED2", "ED2_revise", "PR4",
)


class PromptLibrary:
    """Loads role templates from the packaged prompts or a custom directory."""

    def __init__(self, root: str | Path | None = None) -> None:
        self.root = Path(root) if root else None
        self._cache: dict[tuple[str, str], tuple[str, str]] = {}

    def raw(self, name: str, lang: str) -> str:
        if self.root is not None:
            return (self.root / lang / f"{name}.txt").read_text(encoding="utf-8")
        return resources.files("interpcast").joinpath("prompts", lang, f"{name}.txt").read_text(encoding="utf-8")

    def sections(self, name: str, lang: str) -> tuple[str, str]:
        key = (name, lang)
        if key not in self._cache:
            text = self.raw(name, lang)
            head, sep, user = text.partition("[user]")
            if not sep or "[system]" not in head:
                raise ValueError(f"template {lang}/{name}.txt needs [system] and [user] sections")
            system = head.split("[system]", 1)[1]
            self._cache[key] = (system.strip(), user.strip())
        return self._cache[key]

    def render(self, name: str, lang: str, **values: Any) -> tuple[str, str]:
        system, user = self.sections(name, lang)
        return system.format_map(values), user.format_map(values)


_PRIOR = {
    "en": ("\nA previous answer was rejected by the reviewer. Take these objections into account:\n", "- topic {i}: {reasons}\n"),
    "zh": ("\n上一次的结果被审查员驳回，请参考以下意见：\n", "- 主题 {i}：{reasons}\n"),
}
_LABELS = {
    "en": {"topic": "Topic", "case": "Case", "suggestions": "Suggestions", "background": "Added background"},
    "zh": {"topic": "主题", "case": "案例", "suggestions": "修改建议", "background": "补充背景"},
}


def _schema_text(role: str) -> str:
    return json.dumps(response_schema(ROLE_SCHEMA[role]), ensure_ascii=False, indent=2)


def _topics_block(tcs: TopicCaseSet, lang: str) -> str:
    lab = _LABELS[lang]
    lines = []
    for t, c in zip(tcs.topics, tcs.cases):
        lines.append(f"{lab['topic']} {t.index}: {t.statement}\n  {lab['case']}: {c.text}")
    return "\n".join(lines)


def _feedback_block(feedback: Any, lang: str) -> str:
    data = to_dict(feedback)
    sugg = data.pop("suggestions", "")
    flags = "; ".join(f"{k}={v}" for k, v in data.items())
    return f"{flags}\n{_LABELS[lang]['suggestions']}: {sugg}"


def _coverage(expected: Iterable[int], got: Sequence[int], what: str) -> list[str]:
    expected = list(expected)
    problems = []
    missing = [i for i in expected if i not in got]
    extra = sorted({i for i in got if i not in expected})
    if missing:
        problems.append(f"missing {what} for topic_index {missing}")
    if extra:
        problems.append(f"unexpected {what} for topic_index {extra}")
    return problems


class AgentTeam:
    """Stateless agent operations bound to one gateway and config."""

    def __init__(self, gateway: Gateway, cfg: PipelineConfig | None = None, prompts: PromptLibrary | None = None) -> None:
        self.gateway = gateway
        self.cfg = cfg or gateway.cfg
        self.prompts = prompts or PromptLibrary()

    @property
    def lang(self) -> str:
        return self.cfg.prompt_language.value

    def _ask(self, role: str, template: str, *, check=None, exhausted_error=None, topic_index=None, round=0, **values):
        if topic_index is not None:
            values.setdefault("topic_index", topic_index)
        system, user = self.prompts.render(template, self.lang, schema=_schema_text(role), **values)
        request = self.gateway.request(role, system, user, topic_index=topic_index, round=round)
        kwargs = {"check": check}
        if exhausted_error is not None:
            kwargs["exhausted_error"] = exhausted_error
        return self.gateway.complete_structured(request, ROLE_SCHEMA[role], **kwargs).value

    @staticmethod
    def _same_index(expected: int):
        def check(value) -> list[str]:
            if value.topic_index != expected:
                return [f"topic_index must be {expected}, got {value.topic_index}"]
            return []
        return check

    # -- topics & cases identification ------------------------------------

    def analyze_topics(self, chapter: Chapter, prior_verdicts: Sequence[PairVerdict] | None = None, round: int = 0) -> TopicCaseSet:
        prior = ""
        if prior_verdicts:
            head, line = _PRIOR[self.lang]
            rejected = [v for v in prior_verdicts if not v.valid]
            prior = head + "".join(line.format(i=v.topic_index, reasons=v.reasons) for v in rejected)
        return self._ask(
            "TA", "TA", round=round,
            title=chapter.title, chapter=chapter.body, cap=self.cfg.topic_cap, prior_feedback=prior,
        )

    def validate_pairs(self, chapter: Chapter, tcs: TopicCaseSet, round: int = 0) -> list[PairVerdict]:
        expected = [t.index for t in tcs.topics]
        result = self._ask(
            "PR1", "PR1", round=round,
            check=lambda v: _coverage(expected, [x.topic_index for x in v.verdicts], "verdict"),
            exhausted_error=MissingVerdict,
            chapter=chapter.body, topics=_topics_block(tcs, self.lang),
        )
        by_index = {v.topic_index: v for v in result.verdicts}
        return [by_index[i] for i in expected]

    def enrich_cases(self, chapter: Chapter, tcs: TopicCaseSet, round: int = 0) -> list[EnrichedCase]:
        expected = [t.index for t in tcs.topics]
        result = self._ask(
            "CA1", "CA1", round=round,
            check=lambda v: _coverage(expected, [x.topic_index for x in v.cases], "enriched case"),
            exhausted_error=CoverageError,
            chapter=chapter.body, topics=_topics_block(tcs, self.lang),
        )
        by_index = {c.topic_index: c for c in result.cases}
        return [by_index[i] for i in expected]

    # -- preliminary interpretation ----------------------------------------

    def _case_text(self, case: EnrichedCase) -> str:
        if case.added_background.strip():
            return f"{case.text}\n{_LABELS[self.lang]['background']}: {case.added_background}"
        return case.text

    def _pair(self, role: str, topic: Topic, case: EnrichedCase):
        if topic.index != case.topic_index:
            raise PreconditionError(f"topic {topic.index} paired with case for topic {case.topic_index}")
        return self._ask(
            role, role, topic_index=topic.index, check=self._same_index(topic.index),
            topic=topic.statement, case=self._case_text(case),
        )

    def expand_case(self, topic: Topic, case: EnrichedCase) -> Expansion:
        return self._pair("CA2", topic, case)

    def argue_case(self, topic: Topic, case: EnrichedCase) -> Argument:
        return self._pair("CA3", topic, case)

    def draft_topic(self, topic: Topic, case: EnrichedCase, argument: Argument, expansion: Expansion) -> TopicDraft:
        keys = {topic.index, case.topic_index, argument.topic_index, expansion.topic_index}
        if len(keys) != 1:
            raise PreconditionError(f"draft inputs disagree on topic_index: {sorted(keys)}")
        seg = self._ask(
            "ED1", "ED1", topic_index=topic.index, check=self._same_index(topic.index),
            topic=topic.statement, case=self._case_text(case), argument=argument.text, expansion=expansion.text,
        )
        return TopicDraft(topic_index=topic.index, text=seg.text, round=0, status=Status.IN_REVIEW)

    def review_draft(self, draft: TopicDraft) -> DraftFeedback:
        return self._ask("PR2", "PR2", topic_index=draft.topic_index, round=draft.round, draft=draft.text)

    def revise_draft(self, draft: TopicDraft, feedback: DraftFeedback) -> TopicDraft:
        if feedback.passed:
            raise PreconditionError("revise_draft called with passing feedback")
        seg = self._ask(
            "ED1", "ED1_revise", topic_index=draft.topic_index, round=draft.round + 1,
            check=self._same_index(draft.topic_index),
            draft=draft.text, feedback=_feedback_block(feedback, self.lang),
        )
        return TopicDraft(draft.topic_index, seg.text, draft.round + 1, Status.IN_REVIEW)

    # -- oral rewriting ------------------------------------------------------

    def oralize(self, draft: TopicDraft) -> OralScript:
        seg = self._ask(
            "NR", "NR", topic_index=draft.topic_index, check=self._same_index(draft.topic_index), draft=draft.text,
        )
        return OralScript(draft.topic_index, seg.text, 0, Status.IN_REVIEW)

    def review_oral(self, oral: OralScript) -> OralFeedback:
        return self._ask("PR3", "PR3", topic_index=oral.topic_index, round=oral.round, segment=oral.text)

    def revise_oral(self, oral: OralScript, feedback: OralFeedback) -> OralScript:
        if feedback.passed:
            raise PreconditionError("revise_oral called with passing feedback")
        seg = self._ask(
            "NR", "NR_revise", topic_index=oral.topic_index, round=oral.round + 1,
            check=self._same_index(oral.topic_index),
            segment=oral.text, feedback=_feedback_block(feedback, self.lang),
        )
        return OralScript(oral.topic_index, seg.text, oral.round + 1, Status.IN_REVIEW)

    # -- reconstruction & revision -------------------------------------------

    def integrate(self, manuscript: Manuscript, oral: OralScript) -> Manuscript:
        if oral.topic_index in manuscript.included:
            raise PreconditionError(f"segment {oral.topic_index} is already part of the manuscript")
        result = self._ask(
            "ED2", "ED2", topic_index=oral.topic_index,
            manuscript=manuscript.text, segment=oral.text,
        )
        return Manuscript(result.text, manuscript.included + (oral.topic_index,), 0, Status.IN_REVIEW)

    def review_manuscript(self, manuscript: Manuscript) -> ManuscriptFeedback:
        return self._ask("PR4", "PR4", round=manuscript.round, manuscript=manuscript.text)

    def revise_manuscript(self, manuscript: Manuscript, feedback: ManuscriptFeedback) -> Manuscript:
        if feedback.passed:
            raise PreconditionError("revise_manuscript called with passing feedback")
        result = self._ask(
            "ED2", "ED2_revise", round=manuscript.round + 1,
            manuscript=manuscript.text, feedback=_feedback_block(feedback, self.lang),
        )
        return replace(manuscript, text=result.text, round=manuscript.round + 1, status=Status.IN_REVIEW)
