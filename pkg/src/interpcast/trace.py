"""Append-only record of every gateway call made during a run."""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable

STAGES = ("TCI", "PI", "OR", "RR", "AUDIO")
ROLE_TAGS = ("TA", "PR1", "CA1", "CA2", "CA3", "ED1", "PR2", "NR", "PR3", "ED2", "PR4")

ROLE_STAGE = {
    "TA": "TCI", "PR1": "TCI", "CA1": "TCI",
    "CA2": "PI", "CA3": "PI", "ED1": "PI", "PR2": "PI",
    "NR": "OR", "PR3": "OR",
    "ED2": "RR", "PR4": "RR",
}


def digest(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    stage: str
    role_tag: str
    topic_index: int | None
    round: int
    request_digest: str
    response_digest: str | None
    attempts: int
    error: str | None = None

    def sort_key(self) -> tuple:
        # topic-less records (TCI, whole-manuscript review) sort after per-topic ones
        topic = self.topic_index if self.topic_index is not None else 1 << 30
        return (
            STAGES.index(self.stage),
            topic,
            self.round,
            ROLE_TAGS.index(self.role_tag) if self.role_tag in ROLE_TAGS else len(ROLE_TAGS),
            self.attempts,
        )


class TraceLog:
    """Thread-safe, append-only list of :class:`TraceRecord`."""

    def __init__(self, records: Iterable[TraceRecord] = ()) -> None:
        self._lock = threading.Lock()
        self._records: list[TraceRecord] = list(records)

    def append(self, **fields) -> TraceRecord:
        with self._lock:
            seq = self._records[-1].seq + 1 if self._records else 1
            rec = TraceRecord(seq=seq, **fields)
            self._records.append(rec)
            return rec

    def extend(self, records: Iterable[TraceRecord]) -> None:
        with self._lock:
            for rec in records:
                seq = self._records[-1].seq + 1 if self._records else 1
                self._records.append(replace(rec, seq=seq))

    @property
    def records(self) -> list[TraceRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def since(self, mark: int) -> list[TraceRecord]:
        with self._lock:
            return list(self._records[mark:])

    def canonical(self) -> list[TraceRecord]:
        """Records sorted by (stage, topic, round, role, attempt) and renumbered.

        Python's sort is stable, so ties keep their append order.
        """
        ordered = sorted(self.records, key=TraceRecord.sort_key)
        return [replace(r, seq=i) for i, r in enumerate(ordered, start=1)]


def to_jsonl(records: Iterable[TraceRecord]) -> str:
    return "".join(json.dumps(asdict(r), ensure_ascii=False) + "\n" for r in records)


def from_jsonl(text: str) -> list[TraceRecord]:
    return [TraceRecord(**json.loads(line)) for line in text.splitlines() if line.strip()]


def write_jsonl(records: Iterable[TraceRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_jsonl(records), encoding="utf-8")


def read_jsonl(path: Path) -> list[TraceRecord]:
    return from_jsonl(path.read_text(encoding="utf-8"))


def records_to_dicts(records: Iterable[TraceRecord]) -> list[dict]:
    return [asdict(r) for r in records]


def records_from_dicts(items: Iterable[dict]) -> list[TraceRecord]:
    return [TraceRecord(**d) for d in items]
