"""Four-stage chapter pipeline with checkpointed, resumable execution.

Run directory layout (one directory per chapter)::

    {run_dir}/config.json  chapter.json  run.json     frozen at run start
    {run_dir}/tci/topics.json
    {run_dir}/pi/draft_{i}.json
    {run_dir}/or/oral_{i}.json
    {run_dir}/rr/manuscript.json
    {run_dir}/manuscript.txt  manuscript.json  trace.jsonl

Every JSON file has a ``.sha256`` sidecar. Stage checkpoints also carry the
trace records produced while computing them, so a resumed run reproduces the
trace of an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from . import domain
from .agents import AgentTeam, PromptLibrary
from .domain import (
    Chapter,
    EnrichedCase,
    Manuscript,
    OralScript,
    PipelineConfig,
    Status,
    Topic,
    TopicCaseSet,
    TopicDraft,
    CaseSketch,
    from_dict,
    to_dict,
)
from .errors import (
    ConfigMismatch,
    CorruptCheckpoint,
    InterpcastError,
    NoValidTopics,
    PreconditionError,
    StageError,
)
from .gateway import Gateway, Provider, open_provider
from .trace import TraceLog, TraceRecord, digest, records_from_dicts, records_to_dicts, write_jsonl

log = logging.getLogger(__name__)

STAGE_ORDER = ("TCI", "PI", "OR", "RR")


# ---------------------------------------------------------------------------
# refine loop


@dataclass(frozen=True)
class RefineOutcome:
    artifact: Any
    rounds_used: int
    passed: bool
    feedback: tuple = ()


def refine_loop(initial: Any, reviewer: Callable, reviser: Callable, i_max: int) -> RefineOutcome:
    """Review, and while the review fails and budget remains, revise and re-review.

    The reviewer runs ``rounds_used + 1`` times and the reviser ``rounds_used``
    times, with ``rounds_used <= i_max``. A run that never passes keeps the
    last revision and is marked ``accepted_with_warnings``.
    """
    if i_max < 0:
        raise PreconditionError("i_max must be >= 0")
    artifact = initial
    feedback = reviewer(artifact)
    history = [feedback]
    rounds = 0
    while not feedback.passed and rounds < i_max:
        artifact = reviser(artifact, feedback)
        rounds += 1
        feedback = reviewer(artifact)
        history.append(feedback)
    status = Status.ACCEPTED if feedback.passed else Status.ACCEPTED_WITH_WARNINGS
    return RefineOutcome(replace(artifact, status=status), rounds, feedback.passed, tuple(history))


# ---------------------------------------------------------------------------
# checkpoint store


class RunStore:
    """JSON checkpoints with sha256 sidecars; writes are serialized."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._lock = threading.Lock()

    def path(self, rel: str) -> Path:
        return self.root / rel

    def exists(self, rel: str) -> bool:
        return self.path(rel).exists()

    def write_bytes(self, rel: str, data: bytes) -> None:
        with self._lock:
            target = self.path(rel)
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(target.name + ".tmp")
            tmp.write_bytes(data)
            tmp.replace(target)
            Path(str(target) + ".sha256").write_text(digest(data) + "\n", encoding="ascii")

    def write(self, rel: str, payload: Any) -> None:
        self.write_bytes(rel, (json.dumps(payload, ensure_ascii=False, indent=2) + "\n").encode("utf-8"))

    def read_bytes(self, rel: str) -> bytes | None:
        target = self.path(rel)
        if not target.exists():
            return None
        data = target.read_bytes()
        sidecar = Path(str(target) + ".sha256")
        if not sidecar.exists():
            raise CorruptCheckpoint(f"{rel}: missing sha256 sidecar")
        if sidecar.read_text(encoding="ascii").strip() != digest(data):
            raise CorruptCheckpoint(f"{rel}: digest mismatch")
        return data

    def read(self, rel: str) -> Any:
        data = self.read_bytes(rel)
        return None if data is None else json.loads(data.decode("utf-8"))


# ---------------------------------------------------------------------------
# orchestrator


@dataclass
class ChapterResult:
    manuscript: Manuscript
    trace: list[TraceRecord]
    meta: dict
    run_dir: Path | None = None


class Orchestrator:
    """Drives TCI -> PI -> OR -> RR for one chapter.

    ``run_dir`` enables checkpointing; without it the stage methods still work
    and nothing touches disk. ``on_checkpoint`` is called with each checkpoint
    name right after it is written (tests use it to simulate a killed run).
    """

    def __init__(
        self,
        cfg: PipelineConfig,
        provider: Provider,
        run_dir: str | Path | None = None,
        *,
        provider_desc: str = "custom",
        prompts: PromptLibrary | None = None,
        topic_workers: int = 1,
        on_checkpoint: Callable[[str], None] | None = None,
        gateway: Gateway | None = None,
    ) -> None:
        problems = domain.validate(cfg)
        if problems:
            raise PreconditionError("invalid config: " + "; ".join(problems))
        self.cfg = cfg
        self.provider = provider
        self.provider_desc = provider_desc
        self.trace = TraceLog()
        self.gateway = gateway or Gateway(provider, cfg, self.trace)
        self.trace = self.gateway.trace
        self.agents = AgentTeam(self.gateway, cfg, prompts)
        self.store = RunStore(run_dir) if run_dir is not None else None
        if topic_workers > 1 and getattr(provider, "ordered", False):
            log.info("provider replays responses in order; running topics sequentially")
            topic_workers = 1
        self.topic_workers = max(1, topic_workers)
        self.on_checkpoint = on_checkpoint
        self.tci_notes: dict[str, Any] = {"reinvocations": 0, "dropped": []}

    # -- stages ---------------------------------------------------------------

    def run_tci(self, chapter: Chapter) -> list[tuple[Topic, EnrichedCase]]:
        problems = domain.validate(chapter, self.cfg)
        if problems:
            raise PreconditionError("invalid chapter: " + "; ".join(problems))
        prior = None
        for rnd in range(self.cfg.i_max + 1):
            tcs = self.agents.analyze_topics(chapter, prior, round=rnd)
            verdicts = self.agents.validate_pairs(chapter, tcs, round=rnd)
            if all(v.valid for v in verdicts):
                break
            prior = verdicts
        keep = [v.topic_index for v in verdicts if v.valid]
        if not keep:
            raise NoValidTopics(f"no topic-case pair survived review after {rnd + 1} analyst call(s)")
        dropped = [v.topic_index for v in verdicts if not v.valid]
        self.tci_notes = {"reinvocations": rnd, "dropped": dropped}
        if dropped:
            tcs = _renumber(tcs, keep)
        enriched = self.agents.enrich_cases(chapter, tcs, round=rnd)
        return list(zip(tcs.topics, enriched))

    def run_pi(self, chapter: Chapter, topic: Topic, case: EnrichedCase) -> TopicDraft:
        expansion = self.agents.expand_case(topic, case)
        argument = self.agents.argue_case(topic, case)
        draft = self.agents.draft_topic(topic, case, argument, expansion)
        outcome = refine_loop(draft, self.agents.review_draft, self.agents.revise_draft, self.cfg.i_max)
        return outcome.artifact

    def run_or(self, draft: TopicDraft) -> OralScript:
        oral = self.agents.oralize(draft)
        outcome = refine_loop(oral, self.agents.review_oral, self.agents.revise_oral, self.cfg.i_max)
        return outcome.artifact

    def fold(self, orals: Sequence[OralScript]) -> Manuscript:
        """M_1 = o_1 verbatim, then each later segment integrated in order."""
        if not orals:
            raise PreconditionError("run_rr needs at least one oral script")
        first = orals[0]
        manuscript = Manuscript(first.text, (first.topic_index,), 0, Status.IN_REVIEW)
        for oral in orals[1:]:
            manuscript = self.agents.integrate(manuscript, oral)
        return manuscript

    def run_rr(self, orals: Sequence[OralScript]) -> Manuscript:
        manuscript = self.fold(orals)
        outcome = refine_loop(
            manuscript, self.agents.review_manuscript, self.agents.revise_manuscript, self.cfg.i_max
        )
        return outcome.artifact

    # -- full chapter ---------------------------------------------------------

    def run_chapter(self, chapter: Chapter) -> ChapterResult:
        if self.store is not None:
            self._freeze(chapter)
        try:
            pairs = self._stage("TCI", None, "tci/topics.json",
                                lambda: self.run_tci(chapter), self._dump_tci, self._load_tci)
            self._boundary("TCI")
            drafts = self._per_topic(
                "PI", "pi/draft_{i}.json", [t.index for t, _ in pairs],
                lambda i: self.run_pi(chapter, *pairs[i - 1]), TopicDraft,
            )
            self._boundary("PI")
            orals = self._per_topic(
                "OR", "or/oral_{i}.json", [d.topic_index for d in drafts],
                lambda i: self.run_or(drafts[i - 1]), OralScript,
            )
            self._boundary("OR")
            manuscript = self._stage("RR", None, "rr/manuscript.json",
                                     lambda: self.run_rr(orals), to_dict,
                                     lambda d: from_dict(Manuscript, d))
        except InterpcastError as exc:
            self._persist_failure(exc)
            raise
        if sorted(manuscript.included) != [t.index for t, _ in pairs]:
            raise StageError("RR", PreconditionError("manuscript does not cover every surviving topic"))
        meta = self._meta(chapter, pairs, drafts, orals, manuscript)
        result = ChapterResult(manuscript, self.trace.canonical(), meta)
        if self.store is not None:
            self._finalize(result)
            result.run_dir = self.store.root
            self._boundary("RR")
        return result

    def _boundary(self, stage: str) -> None:
        if self.on_checkpoint is not None:
            self.on_checkpoint(stage)

    def _stage(self, stage: str, topic_index: int | None, rel: str, compute, dump, load):
        cached = self.store.read(rel) if self.store is not None else None
        if cached is not None:
            self._restore(cached)
            return load(cached["artifact"])
        mark = len(self.trace)
        try:
            value = compute()
        except InterpcastError as exc:
            if isinstance(exc, (StageError, NoValidTopics)):
                raise
            raise StageError(stage, exc, topic_index) from exc
        records = [r for r in self.trace.since(mark) if r.stage == stage and r.topic_index == topic_index] \
            if topic_index is not None else [r for r in self.trace.since(mark) if r.stage == stage]
        self._checkpoint(rel, dump(value), records)
        return value

    def _per_topic(self, stage: str, pattern: str, indices: list[int], compute, cls) -> list:
        def one(i: int):
            return self._stage(stage, i, pattern.format(i=i), lambda: compute(i), to_dict, lambda d: from_dict(cls, d))

        if self.topic_workers == 1 or len(indices) == 1:
            return [one(i) for i in indices]
        with ThreadPoolExecutor(max_workers=self.topic_workers) as pool:
            return list(pool.map(one, indices))

    def _checkpoint(self, rel: str, artifact: Any, records: list[TraceRecord]) -> None:
        if self.store is None:
            return
        payload = {"artifact": artifact, "trace": records_to_dicts(records)}
        self.store.write(rel, payload)
        if self.on_checkpoint is not None:
            self.on_checkpoint(rel)

    def _restore(self, cached: dict) -> None:
        records = records_from_dicts(cached.get("trace", []))
        self.trace.extend(records)
        skip = getattr(self.provider, "skip", None)
        if skip is not None:
            skip(len(records))

    # -- persistence ----------------------------------------------------------

    def _freeze(self, chapter: Chapter) -> None:
        snapshot = {"config": to_dict(self.cfg), "chapter": to_dict(chapter)}
        existing = self.store.read("config.json")
        if existing is None:
            self.store.write("config.json", snapshot["config"])
            self.store.write("chapter.json", snapshot["chapter"])
            self.store.write("run.json", {"provider": self.provider_desc})
            return
        if existing != snapshot["config"]:
            diff = sorted(k for k in existing.keys() | snapshot["config"].keys()
                          if existing.get(k) != snapshot["config"].get(k))
            raise ConfigMismatch(f"config differs from the run snapshot in: {', '.join(diff)}")
        if self.store.read("chapter.json") != snapshot["chapter"]:
            raise ConfigMismatch("chapter differs from the run snapshot")

    def _dump_tci(self, pairs) -> dict:
        return {
            "pairs": [{"topic": to_dict(t), "case": to_dict(c)} for t, c in pairs],
            **self.tci_notes,
        }

    def _load_tci(self, data: dict) -> list:
        self.tci_notes = {"reinvocations": data["reinvocations"], "dropped": data["dropped"]}
        return [(from_dict(Topic, d["topic"]), from_dict(EnrichedCase, d["case"])) for d in data["pairs"]]

    def _meta(self, chapter: Chapter, pairs, drafts, orals, manuscript: Manuscript) -> dict:
        warnings = []
        if self.tci_notes["dropped"]:
            warnings.append(
                f"TCI: dropped invalid pair(s) {self.tci_notes['dropped']} "
                f"after {self.tci_notes['reinvocations']} re-invocation(s)"
            )
        for stage, items in (("PI", drafts), ("OR", orals)):
            for a in items:
                if a.status is Status.ACCEPTED_WITH_WARNINGS:
                    warnings.append(f"{stage} topic {a.topic_index}: review still failing after {a.round} revision(s)")
        if manuscript.status is Status.ACCEPTED_WITH_WARNINGS:
            warnings.append(f"RR: review still failing after {manuscript.round} revision(s)")
        trace = self.trace.canonical()
        by_stage: dict[str, int] = {}
        by_role: dict[str, int] = {}
        for r in trace:
            by_stage[r.stage] = by_stage.get(r.stage, 0) + 1
            by_role[r.role_tag] = by_role.get(r.role_tag, 0) + 1
        return {
            "book_id": chapter.book_id,
            "chapter_id": chapter.chapter_id,
            "title": chapter.title,
            "topics": [{"index": t.index, "statement": t.statement} for t, _ in pairs],
            "included": list(manuscript.included),
            "status": manuscript.status.value,
            "rounds": {
                "TCI": self.tci_notes["reinvocations"],
                "PI": {str(d.topic_index): d.round for d in drafts},
                "OR": {str(o.topic_index): o.round for o in orals},
                "RR": manuscript.round,
            },
            "warnings": warnings,
            "calls": {"total": len(trace), "by_stage": by_stage, "by_role": by_role},
        }

    def _finalize(self, result: ChapterResult) -> None:
        self.store.write_bytes("manuscript.txt", result.manuscript.text.encode("utf-8"))
        self.store.write("manuscript.json", result.meta)
        write_jsonl(result.trace, self.store.path("trace.jsonl"))

    def _persist_failure(self, exc: Exception) -> None:
        if self.store is None:
            return
        write_jsonl(self.trace.canonical(), self.store.path("trace.jsonl"))
        info = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, StageError):
            info.update(stage=exc.stage, topic_index=exc.topic_index, cause=type(exc.cause).__name__)
        self.store.write("error.json", info)


def _renumber(tcs: TopicCaseSet, keep: list[int]) -> TopicCaseSet:
    topics, cases = [], []
    for new, old in enumerate(keep, start=1):
        topics.append(Topic(new, tcs.topic(old).statement))
        cases.append(CaseSketch(new, tcs.case(old).text))
    return TopicCaseSet(tuple(topics), tuple(cases))


# ---------------------------------------------------------------------------
# resume


def load_snapshot(run_dir: str | Path) -> tuple[PipelineConfig, Chapter, dict]:
    store = RunStore(run_dir)
    cfg_data = store.read("config.json")
    chapter_data = store.read("chapter.json")
    if cfg_data is None or chapter_data is None:
        raise PreconditionError(f"{run_dir} has no config snapshot")
    return from_dict(PipelineConfig, cfg_data), from_dict(Chapter, chapter_data), store.read("run.json") or {}


def resume(
    run_dir: str | Path,
    cfg: PipelineConfig | None = None,
    provider: Provider | None = None,
    **kwargs: Any,
) -> ChapterResult:
    """Finish an interrupted run, recomputing only missing checkpoints."""
    snap_cfg, chapter, run_info = load_snapshot(run_dir)
    if cfg is not None and to_dict(cfg) != to_dict(snap_cfg):
        raise ConfigMismatch("supplied config differs from the run snapshot")
    desc = run_info.get("provider", "live")
    if provider is None:
        provider = open_provider(desc, chapter.chapter_id)
    orch = Orchestrator(snap_cfg, provider, run_dir, provider_desc=desc, **kwargs)
    return orch.run_chapter(chapter)
