"""The structured verdict format: four tagged stages, parsed strictly.

A document is one line of text shaped like

    <SUMMARY> ... </SUMMARY> <CAPTION> ... </CAPTION>
    <REASONING> Low-level: texture: ... High-level: geometry: ... </REASONING>
    <CONCLUSION> This image is fake. </CONCLUSION>

Each tag pair appears exactly once, in that order. The reasoning stage is a
sequence of steps, each introduced by "Low-level:" or "High-level:" and
naming one attribute before a second colon. The conclusion must start with
the answer template "This image is " followed by the verdict word. Anything
that breaks these rules raises, and the evaluation layer folds every such
exception into the fail outcome.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

STAGES = ("summary", "caption", "reasoning", "conclusion")
OPEN_TAGS = {s: f"<{s.upper()}>" for s in STAGES}
CLOSE_TAGS = {s: f"</{s.upper()}>" for s in STAGES}

ANSWER_PREFIX = "This image is "
VERDICTS = ("real", "fake")

SUMMARY_TEXT = "The task is to judge whether this image is real or fake."

# Closed registry of forgery-related attributes a reasoning step may cite,
# spanning low-level artifacts through high-level semantics.
ATTRIBUTE_REGISTRY = (
    "texture",
    "edges",
    "lighting",
    "noise pattern",
    "compression artifact",
    "anatomy",
    "geometry",
    "physics plausibility",
    "text rendering",
    "semantic consistency",
)

LOW_LEVEL_ATTRIBUTES = ATTRIBUTE_REGISTRY[:5]
HIGH_LEVEL_ATTRIBUTES = ATTRIBUTE_REGISTRY[5:]


class FormatError(ValueError):
    """Tag structure violated; carries the stage that broke."""

    def __init__(self, stage: str, message: str = ""):
        self.stage = stage
        super().__init__(message or f"malformed {stage} stage")


class VerdictError(ValueError):
    """Conclusion present but not matching the answer template."""


def _norm(text: str) -> str:
    return " ".join(text.split())


def _reject_tags(text: str, what: str) -> None:
    for stage in STAGES:
        if OPEN_TAGS[stage] in text or CLOSE_TAGS[stage] in text:
            raise ValueError(f"{what} may not contain stage tags")


# ---------------------------------------------------------------------------
# tokenization

# Tags, hyphenated words, digit runs, then any single non-space symbol.
TOKEN_RE = re.compile(r"</?[A-Z]+>|[A-Za-z]+(?:-[A-Za-z]+)*|[0-9]+|[^\sA-Za-z0-9]")

_NO_SPACE_BEFORE = frozenset({".", ",", ":", ";", "!", "?", ")"})
_NO_SPACE_AFTER = frozenset({"("})


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text)


def detokenize(tokens: list[str]) -> str:
    """Inverse of tokenize up to canonical spacing (idempotent with it)."""
    pieces: list[str] = []
    prev = None
    for tok in tokens:
        if pieces and tok not in _NO_SPACE_BEFORE and prev not in _NO_SPACE_AFTER:
            pieces.append(" ")
        pieces.append(tok)
        prev = tok
    return "".join(pieces)


def canonical(text: str) -> str:
    return detokenize(tokenize(text))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ReasoningStep:
    attribute: str
    text: str

    def __post_init__(self):
        object.__setattr__(self, "attribute", canonical(self.attribute))
        object.__setattr__(self, "text", canonical(self.text))
        if not self.attribute:
            raise ValueError("reasoning step needs an attribute")
        if ":" in self.attribute:
            raise ValueError("attribute may not contain a colon")
        if not self.text:
            raise ValueError("reasoning step needs text")
        rendered = f"{self.attribute}: {self.text}"
        _reject_tags(rendered, "reasoning step")
        if _STEP_MARKER_RE.search(rendered):
            raise ValueError("reasoning step may not embed a level marker")


@dataclass(frozen=True)
class Conclusion:
    verdict: str
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", canonical(self.text))
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be real or fake, got {self.verdict!r}")
        head = ANSWER_PREFIX + self.verdict
        tail = self.text[len(head):]
        if not self.text.startswith(head) or tail[:1].isalpha():
            raise ValueError(f"conclusion text must start with {head!r} as a full word")
        _reject_tags(self.text, "conclusion")


@dataclass(frozen=True)
class CoTDocument:
    summary: str
    caption: str
    low_level: tuple
    high_level: tuple
    conclusion: Conclusion

    def __post_init__(self):
        object.__setattr__(self, "summary", canonical(self.summary))
        object.__setattr__(self, "caption", canonical(self.caption))
        object.__setattr__(self, "low_level", tuple(self.low_level))
        object.__setattr__(self, "high_level", tuple(self.high_level))
        _reject_tags(self.summary, "summary")
        _reject_tags(self.caption, "caption")
        if not self.low_level and not self.high_level:
            raise ValueError("document needs at least one reasoning step")


@dataclass(frozen=True)
class InterpretationRecord:
    attribute: str
    level: str
    description: str
    label: str

    def __post_init__(self):
        if self.attribute not in ATTRIBUTE_REGISTRY:
            raise ValueError(f"unknown attribute {self.attribute!r}")
        if self.level not in ("low", "high"):
            raise ValueError(f"level must be low or high, got {self.level!r}")
        if self.label not in VERDICTS:
            raise ValueError(f"label must be real or fake, got {self.label!r}")
        if not _norm(self.description):
            raise ValueError("description must be nonempty")


# ---------------------------------------------------------------------------
# serialization


def serialize(doc: CoTDocument) -> str:
    """Canonical single-spaced text; equal documents give identical bytes."""
    steps = []
    for step in doc.low_level:
        steps.append(f"Low-level: {step.attribute}: {step.text}")
    for step in doc.high_level:
        steps.append(f"High-level: {step.attribute}: {step.text}")
    parts = [
        OPEN_TAGS["summary"], doc.summary, CLOSE_TAGS["summary"],
        OPEN_TAGS["caption"], doc.caption, CLOSE_TAGS["caption"],
        OPEN_TAGS["reasoning"], " ".join(steps), CLOSE_TAGS["reasoning"],
        OPEN_TAGS["conclusion"], doc.conclusion.text, CLOSE_TAGS["conclusion"],
    ]
    return canonical(" ".join(parts))


# ---------------------------------------------------------------------------
# parsing

_STEP_MARKER_RE = re.compile(r"(Low|High)-level:")
_ANSWER_RE = re.compile(r"This image is ([A-Za-z]+)")


def _split_stages(text: str) -> dict:
    """Cut the four stage bodies out, enforcing exactly-once ordered tags."""
    positions = []
    for stage in STAGES:
        for tag in (OPEN_TAGS[stage], CLOSE_TAGS[stage]):
            if text.count(tag) != 1:
                raise FormatError(stage, f"{tag} must appear exactly once")
            positions.append((stage, tag, text.index(tag)))
    last = -1
    for stage, tag, pos in positions:
        if pos <= last:
            raise FormatError(stage, f"{tag} out of order")
        last = pos
    bodies = {}
    for stage in STAGES:
        start = text.index(OPEN_TAGS[stage]) + len(OPEN_TAGS[stage])
        end = text.index(CLOSE_TAGS[stage])
        bodies[stage] = _norm(text[start:end])
    return bodies


def _parse_reasoning(body: str) -> tuple:
    matches = list(_STEP_MARKER_RE.finditer(body))
    if not matches or matches[0].start() != 0:
        raise FormatError("reasoning", "reasoning must be a sequence of level-marked steps")
    low, high = [], []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(body)
        chunk = body[m.end():end]
        attribute, colon, description = chunk.partition(":")
        if not colon or not _norm(attribute) or not _norm(description):
            raise FormatError("reasoning", f"step needs 'attribute: text', got {chunk!r}")
        step = ReasoningStep(attribute, description)
        (low if m.group(1) == "Low" else high).append(step)
    return tuple(low), tuple(high)


def _parse_conclusion(body: str) -> Conclusion:
    m = _ANSWER_RE.match(body)
    if m is None:
        raise VerdictError(f"conclusion does not follow the answer template: {body!r}")
    word = m.group(1)
    if word not in VERDICTS:
        raise VerdictError(f"verdict word {word!r} is neither real nor fake")
    return Conclusion(word, body)


def parse(text: str) -> CoTDocument:
    bodies = _split_stages(text)
    low, high = _parse_reasoning(bodies["reasoning"])
    conclusion = _parse_conclusion(bodies["conclusion"])
    return CoTDocument(bodies["summary"], bodies["caption"], low, high, conclusion)


def extract_verdict(text: str) -> str:
    """Total: any malformed input is the 'fail' outcome, never an exception."""
    try:
        return parse(text).conclusion.verdict
    except Exception:
        return "fail"


# ---------------------------------------------------------------------------
# construction


def build_annotation(records, caption: str, label: str) -> CoTDocument:
    records = list(records)
    if not records:
        raise ValueError("need at least one interpretation record")
    for rec in records:
        if rec.label != label:
            raise ValueError(f"record label {rec.label!r} does not match document label {label!r}")
    if label not in VERDICTS:
        raise ValueError(f"label must be real or fake, got {label!r}")
    low = tuple(ReasoningStep(r.attribute, r.description) for r in records if r.level == "low")
    high = tuple(ReasoningStep(r.attribute, r.description) for r in records if r.level == "high")
    conclusion = Conclusion(label, f"{ANSWER_PREFIX}{label}.")
    return CoTDocument(SUMMARY_TEXT, caption, low, high, conclusion)
