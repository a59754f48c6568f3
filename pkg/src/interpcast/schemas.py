"""Published JSON schemas: canonical artifact types, LLM response contracts, manifest."""

from __future__ import annotations

import json
from pathlib import Path

from .domain import ARTIFACT_TYPES, json_schema
from .gateway import RESPONSE_TYPES, response_schema
from .ingest import MANIFEST_SCHEMA


def all_schemas() -> dict[str, dict]:
    """Relative file name -> schema."""
    out = {f"{name}.json": json_schema(cls) for name, cls in ARTIFACT_TYPES.items()}
    out.update({f"responses/{name}.json": response_schema(name) for name in RESPONSE_TYPES})
    out["manifest.json"] = MANIFEST_SCHEMA
    return out


def render(schema: dict) -> str:
    return json.dumps(schema, ensure_ascii=False, indent=2) + "\n"


def export_schemas(out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for rel, schema in all_schemas().items():
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(render(schema), encoding="utf-8")
        written.append(target)
    return written
