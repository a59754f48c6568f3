"""Command-line entry point.

Exit codes: 0 success, 2 no valid topics survived review, 1 any other error.
Progress goes to stderr; artifacts go under the run directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import audio, report
from .config import load_config
from .errors import InterpcastError, NoValidTopics, StageError
from .gateway import open_provider
from .ingest import load_book
from .orchestrator import Orchestrator, resume
from .schemas import export_schemas

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_TOPICS = 2

log = logging.getLogger("interpcast")


def _err(msg: str) -> None:
    print(f"interpcast: {msg}", file=sys.stderr)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NoValidTopics) or (isinstance(exc, StageError) and isinstance(exc.cause, NoValidTopics)):
        return EXIT_NO_TOPICS
    return EXIT_ERROR


def _provider_desc(raw: str) -> str:
    if raw.startswith("script:"):
        return "script:" + str(Path(raw[len("script:"):]).resolve())
    if raw != "live":
        raise InterpcastError(f"--provider must be live or script:<path>, got {raw!r}")
    return raw


def _default_tts() -> str:
    import os

    return "live" if os.getenv(audio.TTS_BASE_ENV) else "tone"


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config, i_max=args.i_max, temperature=args.temperature, prompt_language=args.lang)
        chapters = load_book(args.manifest, cfg)
        desc = _provider_desc(args.provider)
    except (InterpcastError, OSError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR
    if args.chapter:
        chapters = [c for c in chapters if c.chapter_id == args.chapter]
        if not chapters:
            _err(f"ManifestError: no chapter {args.chapter!r} in {args.manifest}")
            return EXIT_ERROR
    tts = args.tts or _default_tts()

    def one(chapter) -> int:
        run_dir = Path(args.run_dir) / chapter.book_id / chapter.chapter_id
        try:
            provider = open_provider(desc, chapter.chapter_id)
            orch = Orchestrator(cfg, provider, run_dir, provider_desc=desc, topic_workers=args.topic_workers)
            result = orch.run_chapter(chapter)
            _err(f"{chapter.chapter_id}: {result.meta['calls']['total']} calls, "
                 f"status {result.manuscript.status.value} -> {run_dir}")
            for w in result.meta["warnings"]:
                _err(f"{chapter.chapter_id}: warning: {w}")
            if args.audio:
                wav = audio.synth_run(run_dir, audio.open_tts(tts))
                _err(f"{chapter.chapter_id}: audio -> {wav}")
            return EXIT_OK
        except (InterpcastError, OSError, ValueError) as exc:
            _err(f"{chapter.chapter_id}: {type(exc).__name__}: {exc}")
            return _exit_code(exc)

    if args.jobs > 1 and len(chapters) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(one, chapters))
    else:
        codes = [one(c) for c in chapters]
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_NO_TOPICS if EXIT_NO_TOPICS in codes else EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    try:
        result = resume(args.run_dir)
    except (InterpcastError, OSError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return _exit_code(exc)
    _err(f"resumed {args.run_dir}: status {result.manuscript.status.value}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "config.json").exists():
        _err(f"{run_dir} is not a run directory")
        return EXIT_ERROR
    text, tsv, png = report.write_report(run_dir, args.stage, args.topic)
    sys.stdout.write(text)
    _err(f"report -> {tsv}, {png}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        wav = audio.synth_run(args.run_dir, audio.open_tts(args.tts or _default_tts()), workers=args.workers)
    except (InterpcastError, OSError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR
    _err(f"audio -> {wav}")
    return EXIT_OK


def cmd_schemas(args: argparse.Namespace) -> int:
    for path in export_schemas(args.out):
        _err(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="interpcast", description="Book chapters to podcast-style interpretations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline for a book")
    run.add_argument("--manifest", required=True)
    run.add_argument("--chapter")
    run.add_argument("--config")
    run.add_argument("--run-dir", default="runs")
    run.add_argument("--provider", default="live", help="live or script:<path>")
    run.add_argument("--audio", action="store_true", help="also synthesize audio/chapter.wav")
    run.add_argument("--tts", choices=("tone", "live"))
    run.add_argument("--jobs", type=int, default=1, help="chapters processed concurrently")
    run.add_argument("--topic-workers", type=int, default=1)
    run.add_argument("--i-max", type=int)
    run.add_argument("--temperature", type=float)
    run.add_argument("--lang", choices=("zh", "en"))
    run.set_defaults(func=cmd_run)

    res = sub.add_parser("resume", help="finish an interrupted chapter run")
    res.add_argument("run_dir")
    res.set_defaults(func=cmd_resume)

    ins = sub.add_parser("inspect", help="print call counts, rounds, warnings and trace")
    ins.add_argument("run_dir")
    ins.add_argument("--stage", choices=("TCI", "PI", "OR", "RR"))
    ins.add_argument("--topic", type=int)
    ins.set_defaults(func=cmd_inspect)

    syn = sub.add_parser("synth", help="audio stage only, for a finished run")
    syn.add_argument("run_dir")
    syn.add_argument("--tts", choices=("tone", "live"))
    syn.add_argument("--workers", type=int, default=1)
    syn.set_defaults(func=cmd_synth)

    sch = sub.add_parser("schemas", help="export the published JSON schemas")
    sch.add_argument("--out", default="docs/schemas")
    sch.set_defaults(func=cmd_schemas)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)
