"""Regenerate the frozen script fixtures: ``python tests/fixtures/build_fixtures.py``."""

import json
import sys
from pathlib import Path

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))

from scripting import chapter_script, tci_always_invalid  # noqa: E402


def build() -> dict[str, str]:
    scripts = {
        "book/script.json": {"chapters": {"ch01": chapter_script(2), "ch02": chapter_script(2, pi_fails={2: 1})}},
        "invalid_script.json": {"chapters": {"ch01": tci_always_invalid(2, 3), "ch02": tci_always_invalid(2, 3)}},
    }
    return {k: json.dumps(v, ensure_ascii=False, indent=1) + "\n" for k, v in scripts.items()}


if __name__ == "__main__":
    for rel, text in build().items():
        (HERE / rel).write_text(text, encoding="utf-8")
        print(f"wrote {rel}")
