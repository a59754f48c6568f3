"""Turn an accepted manuscript into one chapter WAV file.

The manuscript is cut into sentence-aligned chunks, each chunk is synthesized
by a TTS backend, and the parts are joined as
``intro + seg_1 + gap + ... + gap + seg_k + outro``.
"""

from __future__ import annotations

import io
import json
import os
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .domain import Manuscript, PipelineConfig, Status
from .errors import (
    ChannelMismatch,
    EmptyManuscript,
    PreconditionError,
    RateMismatch,
    TtsFormatError,
    TtsTransportError,
)
from .trace import TraceRecord, digest

TTS_BASE_ENV = "INTERPCAST_TTS_BASE"

SENTENCE_FINAL = "。！？.!?"
_CLOSERS = "\"'”’」』)）]"


class AudioSegment:
    """Interleaved signed 16-bit PCM with its format."""

    __slots__ = ("samples", "sample_rate_hz", "channels")

    def __init__(self, samples, sample_rate_hz: int, channels: int = 1) -> None:
        arr = np.array(samples, dtype=np.int16).reshape(-1)
        if sample_rate_hz <= 0:
            raise PreconditionError("sample_rate_hz must be > 0")
        if channels < 1 or arr.size % channels:
            raise PreconditionError(f"{arr.size} samples cannot be split into {channels} channel(s)")
        arr.setflags(write=False)
        self.samples = arr
        self.sample_rate_hz = int(sample_rate_hz)
        self.channels = int(channels)

    @property
    def frames(self) -> int:
        return self.samples.size // self.channels

    @property
    def duration_s(self) -> float:
        return self.frames / self.sample_rate_hz

    def to_bytes(self) -> bytes:
        return self.samples.astype("<i2").tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioSegment):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and np.array_equal(self.samples, other.samples)
        )

    def __repr__(self) -> str:
        return f"AudioSegment({self.frames} frames, {self.sample_rate_hz} Hz, {self.channels} ch)"


def silence(frames: int, sample_rate_hz: int, channels: int = 1) -> AudioSegment:
    return AudioSegment(np.zeros(frames * channels, dtype=np.int16), sample_rate_hz, channels)


# ---------------------------------------------------------------------------
# chunk planning


@dataclass(frozen=True)
class SynthesisPlan:
    chunks: tuple[str, ...]


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) of each sentence, whitespace trimmed, in order."""
    spans = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in SENTENCE_FINAL:
            j = i + 1
            while j < n and (text[j] in SENTENCE_FINAL or text[j] in _CLOSERS):
                j += 1
            spans.append((start, j))
            start = i = j
        else:
            i += 1
    if start < n:
        spans.append((start, n))
    trimmed = []
    for s, e in spans:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            trimmed.append((s, e))
    return trimmed


def chunk_text(text: str, cap: int) -> list[str]:
    """Greedy sentence packing; only a sentence longer than ``cap`` is cut inside."""
    if cap < 1:
        raise PreconditionError("chunk cap must be >= 1")
    units = []
    for s, e in sentence_spans(text):
        while e - s > cap:
            units.append((s, s + cap))
            s += cap
            while s < e and text[s].isspace():
                s += 1
        if s < e:
            units.append((s, e))
    chunks = []
    cur = None
    for s, e in units:
        if cur is not None and e - cur[0] <= cap:
            cur = (cur[0], e)
            continue
        if cur is not None:
            chunks.append(text[cur[0]:cur[1]])
        cur = (s, e)
    if cur is not None:
        chunks.append(text[cur[0]:cur[1]])
    return chunks


def plan_chunks(manuscript: Manuscript, cfg: PipelineConfig) -> SynthesisPlan:
    if manuscript.status not in (Status.ACCEPTED, Status.ACCEPTED_WITH_WARNINGS):
        raise PreconditionError(f"manuscript is {manuscript.status.value}, not accepted")
    if not manuscript.text.strip():
        raise EmptyManuscript("manuscript has no text to synthesize")
    return SynthesisPlan(tuple(chunk_text(manuscript.text, cfg.tts_chunk_chars)))


# ---------------------------------------------------------------------------
# backends


class TtsBackend(Protocol):
    def synthesize(self, text: str, sample_rate_hz: int) -> AudioSegment: ...


class ToneBackend:
    """Deterministic stand-in for a real TTS: a sine tone ``ms_per_char`` long per character."""

    def __init__(self, ms_per_char: int = 10, freq_hz: float = 220.0, amplitude: float = 0.2) -> None:
        self.ms_per_char = ms_per_char
        self.freq_hz = freq_hz
        self.amplitude = amplitude

    def synthesize(self, text: str, sample_rate_hz: int) -> AudioSegment:
        frames = len(text) * self.ms_per_char * sample_rate_hz // 1000
        t = np.arange(frames, dtype=np.float64) / sample_rate_hz
        wave_ = np.round(self.amplitude * 32767 * np.sin(2 * np.pi * self.freq_hz * t))
        return AudioSegment(wave_.astype(np.int16), sample_rate_hz, 1)


class HttpTtsBackend:
    """Fish-Speech-style endpoint: ``POST {base}/synthesize`` returning WAV bytes."""

    def __init__(self, base_url: str | None = None, timeout: float = 300.0,
                 transport: httpx.BaseTransport | None = None) -> None:
        base = base_url or os.getenv(TTS_BASE_ENV)
        if not base:
            raise PreconditionError(f"{TTS_BASE_ENV} is required for the live TTS backend")
        self.base_url = base.rstrip("/")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def synthesize(self, text: str, sample_rate_hz: int) -> AudioSegment:
        try:
            resp = self._client.post(f"{self.base_url}/synthesize",
                                     json={"text": text, "sample_rate": sample_rate_hz})
        except httpx.HTTPError as exc:
            raise TtsTransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            raise TtsTransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return wav_from_bytes(resp.content)


def synthesize(chunk: str, cfg: PipelineConfig, backend: TtsBackend | None = None) -> AudioSegment:
    """One chunk to mono audio at ``cfg.sample_rate_hz``; no resampling."""
    if not chunk or not chunk.strip():
        raise PreconditionError("cannot synthesize an empty chunk")
    backend = backend or ToneBackend(cfg.tone_ms_per_char)
    seg = backend.synthesize(chunk, cfg.sample_rate_hz)
    if seg.sample_rate_hz != cfg.sample_rate_hz:
        raise TtsFormatError(f"backend returned {seg.sample_rate_hz} Hz, expected {cfg.sample_rate_hz} Hz")
    if seg.channels != 1:
        raise TtsFormatError(f"backend returned {seg.channels} channels, expected mono")
    return seg


# ---------------------------------------------------------------------------
# assembly


def gap_frames(gap_ms: int, sample_rate_hz: int) -> int:
    return gap_ms * sample_rate_hz // 1000


def assemble(segments: Sequence[AudioSegment], intro: AudioSegment, outro: AudioSegment, gap_ms: int) -> AudioSegment:
    if gap_ms < 0:
        raise PreconditionError("gap_ms must be >= 0")
    parts = [intro, *segments, outro]
    rate, channels = intro.sample_rate_hz, intro.channels
    for p in parts:
        if p.sample_rate_hz != rate:
            raise RateMismatch(f"{p.sample_rate_hz} Hz segment among {rate} Hz segments")
        if p.channels != channels:
            raise ChannelMismatch(f"{p.channels}-channel segment among {channels}-channel segments")
    gap = np.zeros(gap_frames(gap_ms, rate) * channels, dtype=np.int16)
    pieces = [intro.samples]
    for k, seg in enumerate(segments):
        if k:
            pieces.append(gap)
        pieces.append(seg.samples)
    pieces.append(outro.samples)
    return AudioSegment(np.concatenate(pieces), rate, channels)


def chime(sample_rate_hz: int, seconds: float = 0.5, freqs: tuple[float, float] = (660.0, 880.0)) -> AudioSegment:
    """Two-note chime with a linear fade, used when no transition WAV is configured."""
    frames = int(round(seconds * sample_rate_hz))
    t = np.arange(frames, dtype=np.float64) / sample_rate_hz
    half = frames // 2
    freq = np.where(np.arange(frames) < half, freqs[0], freqs[1])
    env = np.linspace(1.0, 0.0, frames) if frames else np.zeros(0)
    samples = np.round(0.25 * 32767 * env * np.sin(2 * np.pi * freq * t))
    return AudioSegment(samples.astype(np.int16), sample_rate_hz, 1)


# ---------------------------------------------------------------------------
# WAV I/O


def wav_to_bytes(segment: AudioSegment) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(segment.channels)
        w.setsampwidth(2)
        w.setframerate(segment.sample_rate_hz)
        w.writeframes(segment.to_bytes())
    return buf.getvalue()


def wav_from_bytes(data: bytes) -> AudioSegment:
    try:
        with wave.open(io.BytesIO(data), "rb") as w:
            if w.getsampwidth() != 2 or w.getcomptype() != "NONE":
                raise TtsFormatError(f"unsupported WAV: {8 * w.getsampwidth()}-bit {w.getcomptype()}")
            channels, rate = w.getnchannels(), w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise TtsFormatError(f"not a PCM WAV file: {exc}") from exc
    return AudioSegment(np.frombuffer(frames, dtype="<i2"), rate, channels)


def write_wav(segment: AudioSegment, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(wav_to_bytes(segment))
    return path


def read_wav(path: str | Path) -> AudioSegment:
    return wav_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# full audio stage


def _transition(path: str, cfg: PipelineConfig) -> AudioSegment:
    if path:
        seg = read_wav(path)
        if seg.sample_rate_hz != cfg.sample_rate_hz:
            raise RateMismatch(f"transition {path} is {seg.sample_rate_hz} Hz, expected {cfg.sample_rate_hz} Hz")
        return seg
    return chime(cfg.sample_rate_hz)


def render_manuscript(
    manuscript: Manuscript,
    cfg: PipelineConfig,
    backend: TtsBackend | None = None,
    workers: int = 1,
) -> tuple[AudioSegment, list[TraceRecord]]:
    """Plan, synthesize (optionally in parallel) and assemble one chapter."""
    plan = plan_chunks(manuscript, cfg)
    backend = backend or ToneBackend(cfg.tone_ms_per_char)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            segments = list(pool.map(lambda c: synthesize(c, cfg, backend), plan.chunks))
    else:
        segments = [synthesize(c, cfg, backend) for c in plan.chunks]
    records = [
        TraceRecord(seq=k, stage="AUDIO", role_tag="TTS", topic_index=None, round=k - 1,
                    request_digest=digest(chunk), response_digest=digest(seg.to_bytes()), attempts=1)
        for k, (chunk, seg) in enumerate(zip(plan.chunks, segments), start=1)
    ]
    intro = _transition(cfg.intro_path, cfg)
    outro = _transition(cfg.outro_path, cfg)
    return assemble(segments, intro, outro, cfg.gap_ms), records


def open_tts(kind: str) -> TtsBackend | None:
    """``tone`` (deterministic) or ``live`` (HTTP endpoint from INTERPCAST_TTS_BASE)."""
    if kind == "tone":
        return None
    if kind == "live":
        return HttpTtsBackend()
    raise PreconditionError(f"unknown TTS backend {kind!r}")


def synth_run(run_dir: str | Path, backend: TtsBackend | None = None, workers: int = 1) -> Path:
    """Audio stage for a finished run: writes ``{run_dir}/audio/chapter.wav``."""
    from .domain import from_dict
    from .orchestrator import RunStore, load_snapshot
    from .trace import write_jsonl

    cfg, _chapter, _info = load_snapshot(run_dir)
    store = RunStore(run_dir)
    cached = store.read("rr/manuscript.json")
    if cached is None:
        raise EmptyManuscript(f"{run_dir} has no accepted manuscript yet")
    manuscript = from_dict(Manuscript, cached["artifact"])
    audio, records = render_manuscript(manuscript, cfg, backend, workers)
    out = write_wav(audio, store.path("audio/chapter.wav"))
    write_jsonl(records, store.path("audio/trace.jsonl"))
    (store.path("audio/chapter.json")).write_text(
        json.dumps({"frames": audio.frames, "sample_rate_hz": audio.sample_rate_hz,
                    "duration_s": round(audio.duration_s, 3), "chunks": len(records)}, indent=2) + "\n",
        encoding="utf-8",
    )
    return out
