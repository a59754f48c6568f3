"""Load a book manifest into :class:`~interpcast.domain.Chapter` values."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .domain import Chapter, Language, PipelineConfig
from .errors import ChapterTooLong, ManifestError, SourceMissing


@dataclass(frozen=True)
class ChapterEntry:
    chapter_id: str
    title: str
    source_path: str


@dataclass(frozen=True)
class BookManifest:
    book_id: str
    title: str
    language: Language
    chapters: tuple[ChapterEntry, ...]


_HEADING = re.compile(r"^\s{0,3}#{1,6}\s+(.*?)(?:\s+#+)?\s*$")
_SETEXT = re.compile(r"^\s{0,3}(=+|-+)\s*$")
_BULLET = re.compile(r"^(\s*)(?:[-*+]|\d+[.)])\s+")
_QUOTE = re.compile(r"^\s{0,3}>\s?")
_RULE = re.compile(r"^\s{0,3}([-*_])(\s*\1){2,}\s*$")
_IMAGE = re.compile(r"!\[([^\]]*)\]\([^)]*\)")
_LINK = re.compile(r"\[([^\]]+)\]\([^)]*\)")
_CODE = re.compile(r"`([^`]+)`")
_STRONG = re.compile(r"(\*\*|__)(?=\S)(.+?)(?<=\S)\1")
_EM_STAR = re.compile(r"\*(?=\S)(.+?)(?<=\S)\*")
_EM_UNDER = re.compile(r"(?<![\w])_(?=\S)(.+?)(?<=\S)_(?![\w])")


def _inline(text: str) -> str:
    text = _IMAGE.sub(r"\1", text)
    text = _LINK.sub(r"\1", text)
    text = _CODE.sub(r"\1", text)
    text = _STRONG.sub(r"\2", text)
    text = _EM_STAR.sub(r"\1", text)
    return _EM_UNDER.sub(r"\1", text)


def strip_markdown(text: str) -> str:
    """Remove heading, emphasis, link, list and quote markup, keeping the words."""
    out = []
    lines = text.splitlines()
    for line in lines:
        if _SETEXT.match(line) and out and out[-1].strip():
            continue
        if _RULE.match(line):
            out.append("")
            continue
        m = _HEADING.match(line)
        if m:
            out.append(_inline(m.group(1)))
            continue
        line = _QUOTE.sub("", line)
        line = _BULLET.sub(r"\1", line)
        out.append(_inline(line))
    return "\n".join(out)


def normalize_text(text: str) -> str:
    """Unify newlines, strip trailing spaces and collapse blank-line runs to one."""
    text = text.replace("\r\n", "\n").replace("\r", "\n").replace("﻿", "")
    lines = [line.rstrip() for line in text.split("\n")]
    text = "\n".join(lines)
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip("\n").strip()


def read_manifest(path: str | Path) -> BookManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    try:
        chapters = tuple(
            ChapterEntry(str(c["chapter_id"]), str(c.get("title", c["chapter_id"])), str(c["source_path"]))
            for c in data["chapters"]
        )
        manifest = BookManifest(str(data["book_id"]), str(data.get("title", data["book_id"])),
                                Language(data.get("language", "en")), chapters)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc!r}") from exc
    ids = [c.chapter_id for c in chapters]
    if len(ids) != len(set(ids)):
        raise ManifestError("chapter_id values must be unique")
    if not chapters:
        raise ManifestError("manifest lists no chapters")
    return manifest


def load_chapter_text(source: Path) -> str:
    raw = source.read_text(encoding="utf-8")
    if source.suffix.lower() in (".md", ".markdown"):
        raw = strip_markdown(raw)
    return normalize_text(raw)


def load_book(manifest_path: str | Path, cfg: PipelineConfig | None = None) -> list[Chapter]:
    """Chapters in manifest order, normalized and length-checked."""
    cfg = cfg or PipelineConfig()
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    for entry in manifest.chapters:
        if not (base / entry.source_path).exists():
            raise SourceMissing(f"chapter {entry.chapter_id}: source not found: {base / entry.source_path}")
    chapters = []
    for entry in manifest.chapters:
        body = load_chapter_text(base / entry.source_path)
        if not body.strip():
            raise ManifestError(f"chapter {entry.chapter_id} is empty")
        if len(body) > cfg.max_chapter_chars:
            raise ChapterTooLong(
                f"chapter {entry.chapter_id} has {len(body)} chars, limit is {cfg.max_chapter_chars}"
            )
        chapters.append(Chapter(manifest.book_id, entry.chapter_id, entry.title, body, manifest.language))
    return chapters


MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "BookManifest",
    "type": "object",
    "properties": {
        "book_id": {"type": "string"},
        "title": {"type": "string"},
        "language": {"type": "string", "enum": ["zh", "en"]},
        "chapters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "chapter_id": {"type": "string"},
                    "title": {"type": "string"},
                    "source_path": {"type": "string", "description": "relative to the manifest file"},
                },
                "required": ["chapter_id", "source_path"],
            },
        },
    },
    "required": ["book_id", "chapters"],
}
