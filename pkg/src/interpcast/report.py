"""Run reports: tab-delimited tables plus a matplotlib summary figure."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .trace import ROLE_TAGS, STAGES, TraceRecord, read_jsonl  # noqa: E402

TRACE_COLUMNS = ("seq", "stage", "role_tag", "topic_index", "round", "attempts", "request_digest", "response_digest")


def load_run(run_dir: str | Path) -> tuple[list[TraceRecord], dict]:
    run_dir = Path(run_dir)
    trace_path = run_dir / "trace.jsonl"
    records = read_jsonl(trace_path) if trace_path.exists() else []
    meta_path = run_dir / "manuscript.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return records, meta


def select(records: list[TraceRecord], stage: str | None = None, topic: int | None = None) -> list[TraceRecord]:
    out = records
    if stage is not None:
        out = [r for r in out if r.stage == stage]
    if topic is not None:
        out = [r for r in out if r.topic_index == topic]
    return out


def call_counts(records: list[TraceRecord]) -> list[tuple[str, str, int]]:
    counts = Counter((r.stage, r.role_tag) for r in records)
    return sorted(((s, r, n) for (s, r), n in counts.items()),
                  key=lambda x: (STAGES.index(x[0]), ROLE_TAGS.index(x[1]) if x[1] in ROLE_TAGS else 99))


def round_rows(meta: dict) -> list[tuple[str, str, int]]:
    rounds = meta.get("rounds", {})
    rows = [("TCI", "", rounds["TCI"])] if "TCI" in rounds else []
    for stage in ("PI", "OR"):
        for topic, n in rounds.get(stage, {}).items():
            rows.append((stage, topic, n))
    if "RR" in rounds:
        rows.append(("RR", "", rounds["RR"]))
    return rows


def format_report(records: list[TraceRecord], meta: dict, stage: str | None = None, topic: int | None = None) -> str:
    """Sections of tab-separated rows, each introduced by a ``# name`` line."""
    picked = select(records, stage, topic)
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    buf.write("# summary\n")
    w.writerow(["key", "value"])
    w.writerow(["calls_total", len(picked)])
    if meta:
        w.writerow(["status", meta.get("status", "")])
        w.writerow(["topics", len(meta.get("topics", []))])
        w.writerow(["warnings", len(meta.get("warnings", []))])
    buf.write("# calls\n")
    w.writerow(["stage", "role_tag", "calls"])
    for row in call_counts(picked):
        w.writerow(row)
    buf.write("# rounds\n")
    w.writerow(["stage", "topic_index", "rounds_used"])
    for row in round_rows(meta):
        if (stage is None or row[0] == stage) and (topic is None or row[1] in ("", str(topic))):
            w.writerow(row)
    buf.write("# warnings\n")
    w.writerow(["warning"])
    for text in meta.get("warnings", []):
        w.writerow([text])
    buf.write("# trace\n")
    w.writerow(TRACE_COLUMNS)
    for r in picked:
        w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in TRACE_COLUMNS])
    return buf.getvalue()


def render_figure(records: list[TraceRecord], meta: dict, path: str | Path) -> Path:
    """Calls per stage stacked by role (left), revision rounds per topic (right)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_calls, ax_rounds) = plt.subplots(1, 2, figsize=(10, 4))

    stages = [s for s in STAGES if any(r.stage == s for r in records)] or list(STAGES[:4])
    counts = Counter((r.stage, r.role_tag) for r in records)
    bottom = [0] * len(stages)
    cmap = plt.get_cmap("tab20")
    for k, role in enumerate(ROLE_TAGS):
        heights = [counts.get((s, role), 0) for s in stages]
        if not any(heights):
            continue
        ax_calls.bar(stages, heights, bottom=bottom, label=role, color=cmap(k))
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax_calls.set_ylabel("gateway calls")
    ax_calls.set_title(f"calls per stage (total {len(records)})")
    ax_calls.set_ylim(0, max(bottom + [1]) * 1.35)
    ax_calls.legend(fontsize=7, ncol=4, loc="upper left")

    rounds = meta.get("rounds", {})
    topics = sorted({int(t) for st in ("PI", "OR") for t in rounds.get(st, {})})
    width = 0.38
    for off, st in ((-width / 2, "PI"), (width / 2, "OR")):
        vals = [rounds.get(st, {}).get(str(t), 0) for t in topics]
        ax_rounds.bar([t + off for t in topics], vals, width=width, label=st)
    if "RR" in rounds:
        ax_rounds.axhline(rounds["RR"], color="grey", linestyle="--", linewidth=1, label="RR")
    ax_rounds.set_xticks(topics)
    ax_rounds.yaxis.set_major_locator(MaxNLocator(integer=True))
    top = max([rounds.get("RR", 0)] + [v for st in ("PI", "OR") for v in rounds.get(st, {}).values()] + [1])
    ax_rounds.set_ylim(0, top * 1.35)
    ax_rounds.set_xlabel("topic index")
    ax_rounds.set_ylabel("revision rounds")
    ax_rounds.set_title("review-revise rounds")
    ax_rounds.legend(fontsize=7, ncol=3, loc="upper left")

    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_report(run_dir: str | Path, stage: str | None = None, topic: int | None = None) -> tuple[str, Path, Path]:
    """Write ``report/report.tsv`` and ``report/report.png`` under the run directory."""
    run_dir = Path(run_dir)
    records, meta = load_run(run_dir)
    text = format_report(records, meta, stage, topic)
    tsv = run_dir / "report" / "report.tsv"
    tsv.parent.mkdir(parents=True, exist_ok=True)
    tsv.write_text(text, encoding="utf-8")
    png = render_figure(select(records, stage, topic), meta, run_dir / "report" / "report.png")
    return text, tsv, png
