"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``. Criterion 10 needs a live
LLM endpoint and a TTS server and is skipped otherwise.
"""

from __future__ import annotations

import json
import os
import random
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from interpcast import audio
from interpcast.cli import main
from interpcast.domain import (
    Manuscript,
    OralScript,
    PipelineConfig,
    Status,
    TopicDraft,
    canonical_json,
    to_dict,
)
from interpcast.errors import NoValidTopics, ParseError, RunInterrupted
from interpcast.gateway import ROLE_SCHEMA, ChatRequest, Gateway, ScriptedProvider
from interpcast.ingest import load_book
from interpcast.orchestrator import Orchestrator, resume
from interpcast.trace import to_jsonl

import scripting as s

FIXTURES = Path(__file__).parent / "fixtures"
BOOK = FIXTURES / "book" / "manifest.json"


@contextmanager
def criterion(capsys, number: int, title: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
    except BaseException as exc:
        with capsys.disabled():
            print(f"\ncriterion {number}: FAIL  {title}  ({type(exc).__name__}: {exc})")
        raise
    with capsys.disabled():
        print(f"\ncriterion {number}: PASS  {title}  ({elapsed:.3f}s)")


def fixture_chapter(chapter_id="ch01"):
    return next(c for c in load_book(BOOK) if c.chapter_id == chapter_id)


def roles(o):
    return [r.role_tag for r in o.trace.records]


# -- 1 ------------------------------------------------------------------------


def always_fail_loops(i_max):
    """(name, entries, run, reviewer, reviser) for each review-revise loop."""
    pi = [s.seg("CA2", 1, "e"), s.seg("CA3", 1, "a"), s.seg("ED1", 1, "d"), s.fb("PR2", False)]
    pi += [s.seg("ED1", 1, "d+"), s.fb("PR2", False)] * i_max
    oral = [s.seg("NR", 1, "o"), s.fb("PR3", False)] + [s.seg("NR", 1, "o+"), s.fb("PR3", False)] * i_max
    rr = [s.seg("ED2", None, "m"), s.fb("PR4", False)] + [s.seg("ED2", None, "m+"), s.fb("PR4", False)] * i_max
    from interpcast.domain import EnrichedCase, Topic

    return [
        ("PI", pi, lambda o: o.run_pi(None, Topic(1, "t"), EnrichedCase(1, "c")), "PR2", "ED1", 1),
        ("OR", oral, lambda o: o.run_or(TopicDraft(1, "d")), "PR3", "NR", 1),
        ("RR", rr, lambda o: o.run_rr([OralScript(1, "a"), OralScript(2, "b")]), "PR4", "ED2", 1),
    ]


def test_criterion_1_loop_bounds(capsys):
    with criterion(capsys, 1, "refine loops stop after exactly i_max revisions", 1.0):
        for i_max in (0, 1, 3):
            for name, entries, go, reviewer, reviser, reviser_base in always_fail_loops(i_max):
                o = Orchestrator(PipelineConfig(i_max=i_max), ScriptedProvider(entries))
                out = go(o)
                seen = roles(o)
                # reviser_base counts non-loop calls of the reviser role (ED1 drafting, NR oralizing, ED2 fold)
                assert seen.count(reviewer) == i_max + 1, (name, i_max, seen)
                assert seen.count(reviser) - reviser_base == i_max, (name, i_max, seen)
                assert out.status is Status.ACCEPTED_WITH_WARNINGS and out.round == i_max


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_short_circuit(capsys):
    with criterion(capsys, 2, "first-review pass keeps the draft untouched", 1.0):
        from interpcast.agents import AgentTeam
        from interpcast.orchestrator import refine_loop

        cases = [
            ("PR2", TopicDraft(1, "Draft text with ümlauts and 中文.\n"), "review_draft", "revise_draft"),
            ("PR3", OralScript(1, "Oral text, trailing space "), "review_oral", "revise_oral"),
            ("PR4", Manuscript("Full manuscript.", (1, 2)), "review_manuscript", "revise_manuscript"),
        ]
        for role, artifact, review, revise in cases:
            provider = ScriptedProvider([s.fb(role, True)])
            team = AgentTeam(Gateway(provider, PipelineConfig()))
            revisions = []

            def reviser(a, fb, _r=getattr(team, revise)):
                revisions.append(a)
                return _r(a, fb)

            out = refine_loop(artifact, getattr(team, review), reviser, 3)
            assert revisions == [] and len(provider.wire) == 1
            assert out.artifact.text.encode() == artifact.text.encode()
            before = dict(to_dict(artifact), status=None)
            after = dict(to_dict(out.artifact), status=None)
            assert before == after
            assert out.artifact.status is Status.ACCEPTED


# -- 3 ------------------------------------------------------------------------


def test_criterion_3_fold(capsys):
    with criterion(capsys, 3, "incremental fold covers 1..n; n=1 is verbatim", 1.0):
        for n in (1, 2, 3):
            orals = [OralScript(i, f"Segment {i} text. ") for i in range(1, n + 1)]
            entries = [s.seg("ED2", None, f"merged up to {i}") for i in range(2, n + 1)] + [s.fb("PR4", True)]
            o = Orchestrator(PipelineConfig(), ScriptedProvider(entries))
            folded = o.fold(orals)
            if n == 1:
                assert folded.text.encode("utf-8") == orals[0].text.encode("utf-8")
            o2 = Orchestrator(PipelineConfig(), ScriptedProvider(entries))
            m = o2.run_rr(orals)
            assert list(m.included) == list(range(1, n + 1))
            assert roles(o2).count("ED2") == n - 1


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_tci_protocol(capsys):
    with criterion(capsys, 4, "analyst call counts under pair rejection", 1.0):
        chapter = fixture_chapter()
        clean = Orchestrator(PipelineConfig(), ScriptedProvider([s.ta(2), s.pr1(2), s.ca1(2)]))
        clean.run_tci(chapter)
        assert roles(clean).count("TA") == 1

        once = [s.ta(2), s.pr1(2, (2,)), s.ta(2), s.pr1(2), s.ca1(2)]
        o = Orchestrator(PipelineConfig(), ScriptedProvider(once))
        o.run_tci(chapter)
        assert roles(o).count("TA") == 2

        for i_max in (0, 1, 3):
            o = Orchestrator(PipelineConfig(i_max=i_max), ScriptedProvider(s.tci_always_invalid(2, i_max)))
            with pytest.raises(NoValidTopics):
                o.run_tci(chapter)
            assert roles(o).count("TA") == i_max + 1


# -- 5 ------------------------------------------------------------------------


def hand_traced_total(n_topics: int) -> int:
    """TA + PR1 + CA1, four PI calls and two OR calls per topic, n-1 integrations, one PR4."""
    return 1 + 1 + 1 + 4 * n_topics + 2 * n_topics + (n_topics - 1) + 1


def triple(run_dir: Path):
    return (
        (run_dir / "manuscript.txt").read_bytes(),
        (run_dir / "trace.jsonl").read_bytes(),
        (run_dir / "audio" / "chapter.wav").read_bytes(),
    )


def cli_run(tmp_path: Path, jobs: int, tag: str) -> Path:
    out = tmp_path / tag
    code = main(["run", "--manifest", str(BOOK), "--provider", f"script:{FIXTURES / 'book' / 'script.json'}",
                 "--run-dir", str(out), "--audio", "--tts", "tone", "--jobs", str(jobs)])
    assert code == 0
    return out / "tiny-habits"


def test_criterion_5_end_to_end_determinism(capsys, tmp_path):
    with criterion(capsys, 5, "2-topic fixture: call total and byte-identical outputs", 5.0):
        chapter = fixture_chapter()
        script = json.loads((FIXTURES / "book" / "script.json").read_text())["chapters"]["ch01"]
        reference = None
        for k in range(10):
            d = tmp_path / f"rep{k}"
            result = Orchestrator(PipelineConfig(), ScriptedProvider(script), d).run_chapter(chapter)
            assert len(result.trace) == hand_traced_total(2) == 17
            audio.synth_run(d)
            got = triple(d)
            reference = reference or got
            assert got == reference
        seq = cli_run(tmp_path, 1, "jobs1")
        par = cli_run(tmp_path, 4, "jobs4")
        for ch in ("ch01", "ch02"):
            assert triple(seq / ch) == triple(par / ch)
        assert triple(seq / "ch01") == reference


@pytest.mark.xfail(strict=True, reason="the stated total of 16 omits one term of its own per-stage sum; see decisions ledger")
def test_criterion_5_literal_sixteen():
    chapter = fixture_chapter()
    script = json.loads((FIXTURES / "book" / "script.json").read_text())["chapters"]["ch01"]
    result = Orchestrator(PipelineConfig(), ScriptedProvider(script)).run_chapter(chapter)
    assert len(result.trace) == 16


# -- 6 ------------------------------------------------------------------------


class Kill:
    def __init__(self, at):
        self.at = at

    def __call__(self, name):
        if name == self.at:
            raise RunInterrupted(name)


def test_criterion_6_resume_equivalence(capsys, tmp_path):
    with criterion(capsys, 6, "kill at each stage boundary, resume, identical result", 5.0):
        chapter = fixture_chapter()
        script = s.chapter_script(2)
        full_provider = ScriptedProvider(script)
        full = Orchestrator(PipelineConfig(), full_provider, tmp_path / "full").run_chapter(chapter)
        done_before = {"TCI": 3, "PI": 11, "OR": 15, "RR": 17}
        for stage in ("TCI", "PI", "OR", "RR"):
            d = tmp_path / stage
            first = ScriptedProvider(script)
            with pytest.raises(RunInterrupted):
                Orchestrator(PipelineConfig(), first, d, on_checkpoint=Kill(stage)).run_chapter(chapter)
            assert len(first.wire) == done_before[stage]
            again = ScriptedProvider(script)
            resumed = resume(d, provider=again)
            assert canonical_json(resumed.manuscript) == canonical_json(full.manuscript)
            assert to_jsonl(resumed.trace) == to_jsonl(full.trace)
            assert (d / "manuscript.txt").read_bytes() == (tmp_path / "full" / "manuscript.txt").read_bytes()
            assert (d / "trace.jsonl").read_bytes() == (tmp_path / "full" / "trace.jsonl").read_bytes()
            # only the calls after the checkpoint went out, and they match the full run's payloads
            assert again.wire == full_provider.wire[done_before[stage]:]


# -- 7 ------------------------------------------------------------------------


def valid_reply(role: str) -> str:
    if role == "TA":
        return s.ta(2)["text"]
    if role == "PR1":
        return s.pr1(2)["text"]
    if role == "CA1":
        return s.ca1(2)["text"]
    if role in ("PR2", "PR3", "PR4"):
        return s.fb(role, True)["text"]
    if role == "ED2":
        return s.seg(role, None, "manuscript body")["text"]
    return s.seg(role, 1, f"{role} body")["text"]


def test_criterion_7_structured_output(capsys):
    with criterion(capsys, 7, "fenced, malformed-then-valid and persistently malformed replies, all 11 roles", 1.0):
        cfg = PipelineConfig()
        assert len(ROLE_SCHEMA) == 11
        for role, schema in ROLE_SCHEMA.items():
            req = ChatRequest("s", "u", cfg.temperature, cfg.max_tokens, role)
            fenced = f"Here you go:\n```json\n{valid_reply(role)}\n```\nHope this helps."
            gw = Gateway(ScriptedProvider([fenced]), cfg)
            assert gw.complete_structured(req, schema).attempts == 1

            gw = Gateway(ScriptedProvider(['{"broken": ', valid_reply(role)]), cfg)
            assert gw.complete_structured(req, schema).attempts == 2

            provider = ScriptedProvider(["not json at all"] * 10)
            gw = Gateway(provider, cfg)
            with pytest.raises(ParseError) as info:
                gw.complete_structured(req, schema)
            assert len(provider.wire) == 1 + cfg.parse_retries == info.value.attempts


# -- 8 ------------------------------------------------------------------------


def test_criterion_8_audio_arithmetic(capsys, tmp_path):
    with criterion(capsys, 8, "assemble length equation, WAV round trip, chunk rejoin", 10.0):
        rng = random.Random(2024)
        for _ in range(1000):
            rate = rng.choice([16000, 22050, 24000, 44100, 48000])
            k = rng.randint(1, 8)
            gap = rng.randint(0, 1500)
            segs = [audio.silence(rng.randint(0, 5000), rate) for _ in range(k)]
            intro = audio.silence(rng.randint(0, 3000), rate)
            outro = audio.silence(rng.randint(0, 3000), rate)
            out = audio.assemble(segs, intro, outro, gap)
            expected = intro.frames + sum(x.frames for x in segs) + outro.frames + (k - 1) * (gap * rate // 1000)
            assert out.frames == expected

        for k in range(20):
            samples = np.random.default_rng(k).integers(-32768, 32768, size=rng.randint(0, 4000), dtype=np.int16)
            seg = audio.AudioSegment(samples, rng.choice([22050, 44100]), 1)
            assert audio.read_wav(audio.write_wav(seg, tmp_path / f"{k}.wav")) == seg

        cfg = PipelineConfig()
        enders = [".", "!", "?", "。", "！", "？"]
        for k in range(100):
            words = []
            for _ in range(rng.randint(1, 60)):
                length = rng.choice([rng.randint(1, 40), rng.randint(100, 900)])
                words.append("x" * length + rng.choice(enders))
            text = rng.choice([" ", "\n", "  "]).join(words)
            chunks = audio.plan_chunks(Manuscript(text, (1,), 0, Status.ACCEPTED), cfg).chunks
            assert all(c and len(c) <= cfg.tts_chunk_chars for c in chunks)
            pos = 0
            for c in chunks:
                at = text.index(c, pos)
                assert not text[pos:at].strip()
                pos = at + len(c)
            assert not text[pos:].strip()


# -- 9 ------------------------------------------------------------------------


def test_criterion_9_config_fidelity(capsys):
    with criterion(capsys, 9, "default temperature, token cap, i_max and topic cap, on the wire", 1.0):
        cfg = PipelineConfig()
        data = json.loads(canonical_json(cfg))
        assert (data["temperature"], data["max_tokens"], data["i_max"], data["topic_cap"]) == (1.3, 8192, 3, 3)
        rendered = canonical_json(cfg)
        assert '"temperature": 1.3' in rendered and '"max_tokens": 8192' in rendered
        provider = ScriptedProvider(s.chapter_script(2))
        Orchestrator(cfg, provider).run_chapter(fixture_chapter())
        for payload in provider.wire:
            wire = json.dumps(payload)
            assert '"temperature": 1.3' in wire and '"max_tokens": 8192' in wire


# -- 10 -----------------------------------------------------------------------


LIVE = os.getenv("INTERPCAST_API_KEY") and os.getenv("INTERPCAST_TTS_BASE")


@pytest.mark.skipif(not LIVE, reason="needs INTERPCAST_API_KEY and INTERPCAST_TTS_BASE")
def test_criterion_10_live_smoke(capsys, tmp_path):
    with criterion(capsys, 10, "live chapter end to end", 3600.0):
        book = tmp_path / "book"
        shutil.copytree(FIXTURES / "book", book)
        code = main(["run", "--manifest", str(book / "manifest.json"), "--chapter", "ch01",
                     "--run-dir", str(tmp_path / "runs"), "--audio", "--tts", "live"])
        assert code == 0
        d = tmp_path / "runs" / "tiny-habits" / "ch01"
        text = (d / "manuscript.txt").read_text(encoding="utf-8")
        meta = json.loads((d / "manuscript.json").read_text(encoding="utf-8"))
        assert text.strip()
        # every surviving topic should be discussed; match on its leading words
        for topic in meta["topics"]:
            head = " ".join(topic["statement"].split()[:3]).lower()
            assert head in text.lower(), topic["statement"]
        wav = audio.read_wav(d / "audio" / "chapter.wav")
        assert wav.frames > 0
