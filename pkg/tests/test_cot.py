import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fakelab import cot
from fakelab.cot import (
    ATTRIBUTE_REGISTRY,
    CoTDocument,
    Conclusion,
    FormatError,
    InterpretationRecord,
    ReasoningStep,
    VerdictError,
    build_annotation,
    detokenize,
    extract_verdict,
    parse,
    serialize,
    tokenize,
)


def make_doc(verdict="fake", low=1, high=1):
    lows = tuple(
        ReasoningStep(ATTRIBUTE_REGISTRY[i], f"low level observation number {i}.")
        for i in range(low)
    )
    highs = tuple(
        ReasoningStep(ATTRIBUTE_REGISTRY[5 + i], f"high level observation number {i}.")
        for i in range(high)
    )
    return CoTDocument(
        summary=cot.SUMMARY_TEXT,
        caption="Two bright blobs sit on a dark field.",
        low_level=lows,
        high_level=highs,
        conclusion=Conclusion(verdict, f"This image is {verdict}."),
    )


# ---------------------------------------------------------------------------
# tokenization


def test_tokenize_splits_tags_words_punctuation():
    toks = tokenize("<SUMMARY> A low-level cue, 3 blobs. </SUMMARY>")
    assert toks == ["<SUMMARY>", "A", "low-level", "cue", ",", "3", "blobs", ".", "</SUMMARY>"]


def test_detokenize_spacing_rules():
    assert detokenize(["a", ",", "b", "."]) == "a, b."
    assert detokenize(["(", "a", ")", ":", "b"]) == "(a): b"


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abz .,:()!?03-", max_size=40))
def test_canonical_is_idempotent(text):
    once = cot.canonical(text)
    assert cot.canonical(once) == once


def test_tokenize_detokenize_round_trip_on_canonical_doc():
    text = serialize(make_doc())
    assert detokenize(tokenize(text)) == text


# ---------------------------------------------------------------------------
# serialize / parse round trip


def test_round_trip_example_doc():
    doc = make_doc()
    assert parse(serialize(doc)) == doc


def test_serialize_contains_each_tag_once_in_order():
    text = serialize(make_doc())
    tags = [
        "<SUMMARY>", "</SUMMARY>", "<CAPTION>", "</CAPTION>",
        "<REASONING>", "</REASONING>", "<CONCLUSION>", "</CONCLUSION>",
    ]
    positions = []
    for tag in tags:
        assert text.count(tag) == 1
        positions.append(text.index(tag))
    assert positions == sorted(positions)


def test_serialize_deterministic():
    assert serialize(make_doc()) == serialize(make_doc())


def test_serialize_parse_serialize_idempotent():
    text = serialize(make_doc(low=2, high=3))
    assert serialize(parse(text)) == text


words = st.lists(
    st.text(alphabet="abcdefgh", min_size=1, max_size=7), min_size=1, max_size=8
).map(" ".join)
steps_low = st.lists(
    st.builds(ReasoningStep, st.sampled_from(ATTRIBUTE_REGISTRY[:5]), words),
    max_size=3,
)
steps_high = st.lists(
    st.builds(ReasoningStep, st.sampled_from(ATTRIBUTE_REGISTRY[5:]), words),
    max_size=3,
)


@settings(max_examples=200, deadline=None)
@given(
    summary=words,
    caption=words,
    low=steps_low,
    high=steps_high,
    verdict=st.sampled_from(["real", "fake"]),
    tail=words,
)
def test_parse_serialize_identity_randomized(summary, caption, low, high, verdict, tail):
    if not low and not high:
        low = [ReasoningStep("texture", "plain words here")]
    doc = CoTDocument(
        summary=summary,
        caption=caption,
        low_level=tuple(low),
        high_level=tuple(high),
        conclusion=Conclusion(verdict, f"This image is {verdict}. {tail}"),
    )
    assert parse(serialize(doc)) == doc


def test_parse_tolerates_text_outside_stages():
    text = "noise before " + serialize(make_doc()) + " and after"
    assert parse(text) == make_doc()


# ---------------------------------------------------------------------------
# strictness: every tag, three mutations each


TAGS = [
    ("summary", "<SUMMARY>"), ("summary", "</SUMMARY>"),
    ("caption", "<CAPTION>"), ("caption", "</CAPTION>"),
    ("reasoning", "<REASONING>"), ("reasoning", "</REASONING>"),
    ("conclusion", "<CONCLUSION>"), ("conclusion", "</CONCLUSION>"),
]


@pytest.mark.parametrize("stage,tag", TAGS)
def test_missing_tag_names_the_stage(stage, tag):
    text = serialize(make_doc()).replace(tag, "", 1)
    with pytest.raises(FormatError) as exc:
        parse(text)
    assert exc.value.stage == stage


@pytest.mark.parametrize("stage,tag", TAGS)
def test_duplicated_tag_names_the_stage(stage, tag):
    text = serialize(make_doc()).replace(tag, f"{tag} {tag}", 1)
    with pytest.raises(FormatError) as exc:
        parse(text)
    assert exc.value.stage == stage


@pytest.mark.parametrize("stage,tag", TAGS)
def test_displaced_tag_fails(stage, tag):
    order = [t for _, t in TAGS]
    i = order.index(tag)
    text = serialize(make_doc()).replace(tag, "", 1)
    if i == 0:
        text = text.replace(order[1], order[1] + " " + tag, 1)
    else:
        text = text.replace(order[i - 1], tag + " " + order[i - 1], 1)
    with pytest.raises(FormatError):
        parse(text)


def test_swapped_stages_fail():
    doc = make_doc()
    text = serialize(doc)
    summary_block = "<SUMMARY> " + doc.summary + " </SUMMARY>"
    caption_block = "<CAPTION> " + doc.caption + " </CAPTION>"
    swapped = text.replace(summary_block, "@@").replace(caption_block, summary_block)
    swapped = swapped.replace("@@", caption_block)
    with pytest.raises(FormatError):
        parse(swapped)


# ---------------------------------------------------------------------------
# verdicts


def test_verdict_extracted_from_template():
    assert parse(serialize(make_doc("fake"))).conclusion.verdict == "fake"
    assert parse(serialize(make_doc("real"))).conclusion.verdict == "real"


def test_conclusion_off_template_raises_verdict_error():
    text = serialize(make_doc()).replace("This image is fake.", "Probably forged.")
    with pytest.raises(VerdictError):
        parse(text)


def test_conclusion_with_unknown_word_raises_verdict_error():
    text = serialize(make_doc()).replace("This image is fake.", "This image is genuine.")
    with pytest.raises(VerdictError):
        parse(text)


def test_extract_verdict_well_formed():
    assert extract_verdict(serialize(make_doc("real"))) == "real"
    assert extract_verdict(serialize(make_doc("fake"))) == "fake"


def test_extract_verdict_fail_cases():
    assert extract_verdict("free text with no tags") == "fail"
    assert extract_verdict("") == "fail"
    genuine = serialize(make_doc()).replace("This image is fake.", "This image is genuine.")
    assert extract_verdict(genuine) == "fail"


@settings(max_examples=500, deadline=None)
@given(st.text(max_size=200))
def test_extract_verdict_total_on_arbitrary_text(text):
    assert extract_verdict(text) in ("real", "fake", "fail")


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_extract_verdict_total_on_mangled_docs(seed):
    import random

    r = random.Random(seed)
    text = serialize(make_doc(r.choice(["real", "fake"])))
    chars = list(text)
    for _ in range(r.randrange(1, 6)):
        op = r.randrange(3)
        pos = r.randrange(len(chars))
        if op == 0:
            chars[pos] = r.choice("<>/ABCxyz .:")
        elif op == 1:
            del chars[pos]
        else:
            chars.insert(pos, r.choice("<>/ABCxyz .:"))
    assert extract_verdict("".join(chars)) in ("real", "fake", "fail")


# ---------------------------------------------------------------------------
# build_annotation


def records_for(label):
    return [
        InterpretationRecord("texture", "low", "surface repeats in a fixed grid.", label),
        InterpretationRecord("noise pattern", "low", "noise looks stamped, not organic.", label),
        InterpretationRecord("geometry", "high", "the shapes defy perspective.", label),
    ]


def test_build_annotation_routes_levels_in_order():
    doc = build_annotation(records_for("fake"), "a caption.", "fake")
    assert [s.attribute for s in doc.low_level] == ["texture", "noise pattern"]
    assert [s.attribute for s in doc.high_level] == ["geometry"]


def test_build_annotation_conclusion_from_label():
    doc = build_annotation(records_for("fake"), "a caption.", "fake")
    assert doc.conclusion.text == "This image is fake."
    doc = build_annotation(records_for("real"), "a caption.", "real")
    assert doc.conclusion.verdict == "real"


def test_build_annotation_round_trip_preserves_record_texts():
    recs = records_for("fake")
    doc = parse(serialize(build_annotation(recs, "two blobs on a field.", "fake")))
    texts = [s.text for s in doc.low_level] + [s.text for s in doc.high_level]
    assert texts == [r.description for r in recs]


def test_build_annotation_rejects_mixed_labels():
    recs = records_for("fake")
    recs.append(InterpretationRecord("edges", "low", "crisp edges.", "real"))
    with pytest.raises(ValueError):
        build_annotation(recs, "caption.", "fake")


def test_build_annotation_rejects_empty():
    with pytest.raises(ValueError):
        build_annotation([], "caption.", "fake")


def test_interpretation_record_rejects_unknown_attribute():
    with pytest.raises(ValueError):
        InterpretationRecord("vibes", "low", "feels off.", "fake")


def test_registry_is_the_fixed_ten():
    assert len(ATTRIBUTE_REGISTRY) == 10
    assert len(set(ATTRIBUTE_REGISTRY)) == 10


# ---------------------------------------------------------------------------
# document validation


def test_document_requires_a_reasoning_step():
    with pytest.raises(ValueError):
        CoTDocument("s", "c", (), (), Conclusion("real", "This image is real."))


def test_conclusion_requires_template_prefix():
    with pytest.raises(ValueError):
        Conclusion("real", "It is real.")
    with pytest.raises(ValueError):
        Conclusion("real", "This image is really nice.")


def test_step_rejects_marker_and_tag_collisions():
    with pytest.raises(ValueError):
        ReasoningStep("texture", "see Low-level: stuff")
    with pytest.raises(ValueError):
        ReasoningStep("texture", "has <SUMMARY> inside")
    with pytest.raises(ValueError):
        ReasoningStep("a:b", "text here")
