"""Config loading, trace ordering, report rendering and the frozen fixtures."""

import json
from pathlib import Path

import pytest

from interpcast.config import load_config
from interpcast.domain import PipelineConfig
from interpcast.errors import PreconditionError
from interpcast.report import format_report, render_figure
from interpcast.schemas import all_schemas, render
from interpcast.trace import TraceLog, TraceRecord, from_jsonl, to_jsonl

ROOT = Path(__file__).resolve().parents[1]


def test_config_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("i_max = 2\ngap_ms = 100\n")
    cfg = load_config(path, i_max=5, temperature=None)
    assert (cfg.i_max, cfg.gap_ms, cfg.temperature) == (5, 100, 1.3)
    assert load_config() == PipelineConfig()


def test_config_rejects_unknown_and_invalid(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("imax = 2\n")
    with pytest.raises(PreconditionError):
        load_config(path)
    with pytest.raises(PreconditionError):
        load_config(i_max=-1)


def rec(seq, stage, role, topic=None, rnd=0, attempts=1):
    return TraceRecord(seq, stage, role, topic, rnd, "a" * 64, "b" * 64, attempts)


def test_canonical_order_ignores_arrival():
    log = TraceLog()
    log.extend([rec(0, "PI", "CA2", 2), rec(1, "PI", "CA2", 1), rec(2, "TCI", "TA"), rec(3, "RR", "PR4")])
    got = [(r.seq, r.stage, r.topic_index) for r in log.canonical()]
    assert got == [(1, "TCI", None), (2, "PI", 1), (3, "PI", 2), (4, "RR", None)]


def test_jsonl_round_trip():
    records = [rec(1, "TCI", "TA"), rec(2, "PI", "ED1", 1, 2, 3)]
    assert from_jsonl(to_jsonl(records)) == records


def test_report_sections_and_figure(tmp_path):
    records = [rec(1, "TCI", "TA"), rec(2, "PI", "CA2", 1), rec(3, "PI", "CA2", 2)]
    meta = {"status": "accepted", "topics": [{}, {}], "warnings": ["w1"],
            "rounds": {"TCI": 0, "PI": {"1": 1, "2": 0}, "OR": {"1": 0, "2": 0}, "RR": 0}}
    text = format_report(records, meta, stage="PI", topic=1)
    assert [l for l in text.splitlines() if l.startswith("# ")] == \
        ["# summary", "# calls", "# rounds", "# warnings", "# trace"]
    assert "calls_total\t1" in text
    assert "PI\t1\t1" in text and "PI\t2\t0" not in text
    png = render_figure(records, meta, tmp_path / "r.png")
    assert png.read_bytes()[:4] == b"\x89PNG"


def test_published_schemas_in_sync():
    for rel, schema in all_schemas().items():
        path = ROOT / "docs" / "schemas" / rel
        assert path.read_text(encoding="utf-8") == render(schema), f"regenerate {rel}: interpcast schemas"


def test_frozen_fixtures_in_sync():
    import sys

    sys.path.insert(0, str(ROOT / "tests" / "fixtures"))
    from build_fixtures import build

    for rel, text in build().items():
        assert (ROOT / "tests" / "fixtures" / rel).read_text(encoding="utf-8") == text


def test_fixture_script_shape():
    data = json.loads((ROOT / "tests" / "fixtures" / "book" / "script.json").read_text())
    assert sorted(data["chapters"]) == ["ch01", "ch02"]
    assert data["chapters"]["ch01"][0]["role"] == "TA"
