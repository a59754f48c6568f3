import itertools

import pytest
from hypothesis import given, strategies as st

from interpcast import domain
from interpcast.domain import (
    CaseSketch,
    Chapter,
    DraftFeedback,
    Flag,
    Manuscript,
    ManuscriptFeedback,
    OralFeedback,
    PipelineConfig,
    Status,
    Topic,
    TopicCaseSet,
    TopicDraft,
    validate,
)


def tcs(n):
    return TopicCaseSet(
        tuple(Topic(i, f"t{i}") for i in range(1, n + 1)),
        tuple(CaseSketch(i, f"c{i}") for i in range(1, n + 1)),
    )


def test_three_matched_pairs_is_valid():
    assert validate(tcs(3)) == []


def test_zero_topics_reports_count():
    assert "topic count out of range [1,3]" in validate(tcs(0))


def test_four_topics_exceed_cap():
    assert "topic count out of range [1,3]" in validate(tcs(4))
    assert validate(tcs(4), PipelineConfig(topic_cap=4)) == []


def test_mismatched_case_index():
    bad = TopicCaseSet((Topic(1, "a"), Topic(2, "b")), (CaseSketch(1, "x"), CaseSketch(3, "y")))
    assert any("does not match" in v for v in validate(bad))


def test_gapped_indices():
    bad = TopicCaseSet((Topic(1, "a"), Topic(3, "b")), (CaseSketch(1, "x"), CaseSketch(3, "y")))
    assert "topic indices must be 1..n with no gaps" in validate(bad)


def test_pass_feedback_with_suggestions():
    fb = DraftFeedback(Flag.YES, Flag.YES, "tighten intro")
    assert validate(fb) == ["suggestions must be empty on pass"]


@pytest.mark.parametrize("cls,names", [
    (DraftFeedback, ("compt", "log")),
    (OralFeedback, ("natural", "fluent")),
    (ManuscriptFeedback, ("coherent", "fluent", "natural")),
])
def test_pass_iff_empty_suggestions_enumerated(cls, names):
    # every flag combination x {empty, non-empty} suggestions
    for flags in itertools.product([Flag.YES, Flag.NO], repeat=len(names)):
        for sugg in ("", "fix it"):
            fb = cls(**dict(zip(names, flags)), suggestions=sugg)
            all_yes = all(f is Flag.YES for f in flags)
            assert fb.passed == all_yes
            assert (validate(fb) == []) == (all_yes == (sugg == ""))


def test_warnings_status_requires_final_round():
    assert validate(TopicDraft(1, "x", 3, Status.ACCEPTED_WITH_WARNINGS)) == []
    assert validate(TopicDraft(1, "x", 2, Status.ACCEPTED_WITH_WARNINGS)) != []
    assert validate(TopicDraft(1, "x", 4, Status.IN_REVIEW)) != []


def test_chapter_checks(cfg):
    assert validate(Chapter("b", "c", "t", "   \n ")) == ["chapter body is empty"]
    long = Chapter("b", "c", "t", "x" * (cfg.max_chapter_chars + 1))
    assert any("max_chapter_chars" in v for v in validate(long, cfg))


def test_validate_is_total():
    broken = TopicCaseSet(None, None)  # type: ignore[arg-type]
    report = validate(broken)
    assert report and report[0].startswith("malformed")
    assert validate(object()) == []


@pytest.mark.parametrize("raw,flag", [
    ("yes", Flag.YES), ("YES", Flag.YES), (" Yes ", Flag.YES), ("是", Flag.YES),
    ("no", Flag.NO), ("No", Flag.NO), ("否", Flag.NO), (True, Flag.YES), (False, Flag.NO),
])
def test_flag_normalization(raw, flag):
    assert domain.normalize_flag(raw) is flag


def test_flag_normalization_rejects_junk():
    with pytest.raises(ValueError):
        domain.normalize_flag("maybe")


def test_default_config_values():
    d = domain.to_dict(PipelineConfig())
    assert (d["temperature"], d["max_tokens"], d["i_max"], d["topic_cap"]) == (1.3, 8192, 3, 3)
    assert d["parse_retries"] == 2
    assert '"temperature": 1.3' in domain.canonical_json(PipelineConfig())


text = st.text(min_size=1, max_size=40)
flag = st.sampled_from(list(Flag))
status = st.sampled_from(list(Status))

values = st.one_of(
    st.builds(Chapter, text, text, text, text, st.sampled_from(list(domain.Language))),
    st.integers(1, 3).flatmap(lambda n: st.builds(
        TopicCaseSet,
        st.tuples(*[st.builds(Topic, st.just(i), text) for i in range(1, n + 1)]),
        st.tuples(*[st.builds(CaseSketch, st.just(i), text) for i in range(1, n + 1)]),
    )),
    st.builds(TopicDraft, st.integers(1, 3), text, st.integers(0, 3), status),
    st.builds(DraftFeedback, flag, flag, text),
    st.builds(ManuscriptFeedback, flag, flag, flag, text),
    st.builds(Manuscript, text, st.lists(st.integers(1, 3), unique=True).map(tuple), st.integers(0, 3), status),
    st.builds(PipelineConfig, i_max=st.integers(0, 5), temperature=st.floats(0, 2, allow_nan=False)),
)


@given(values)
def test_json_round_trip(value):
    raw = domain.to_json(value)
    back = domain.from_json(type(value), raw)
    assert back == value
    assert domain.to_json(back) == raw
