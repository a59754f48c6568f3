from __future__ import annotations

from pathlib import Path

import pytest

from interpcast.domain import Chapter, Language, PipelineConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture
def chapter() -> Chapter:
    return Chapter(
        book_id="tiny-habits",
        chapter_id="ch01",
        title="Why Small Habits Compound",
        body="Small habits compound. A one percent gain each day adds up over a year.",
        language=Language.EN,
    )


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES
