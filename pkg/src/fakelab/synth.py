"""Synthetic forgery dataset: blob scenes with plantable artifact signals.

Real samples are smooth compositions of Gaussian blobs. Fake samples take
the same base scene and plant one or both of two signals:

* a low-level one: a faint pixel-scale checkerboard added over the frame,
  the stand-in for generator texture fingerprints;
* a high-level one: a flat dark-rimmed square pasted over the soft scene,
  brighter than the diffuse-scene intensity ceiling, the stand-in for a
  semantic inconsistency: an unshaded object no diffuse-light scene could
  contain.

Having two separable channels is the point: fusing a texture-sensitive
stream with a shape-sensitive stream must measurably beat either alone.
The `difficulty` knob weakens the checker and shrinks the square.

Which attribute pools an annotation walks through is drawn from the same
split for both labels, so the reasoning route carries no label signal;
only the per-step sentence flavor (and the planted evidence) separates
real from fake.

All randomness flows through an explicit SplitMix64 stream per sample, so
a (seed, label, index) triple names the same sample on every platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cot import (
    ATTRIBUTE_REGISTRY,
    CoTDocument,
    InterpretationRecord,
    SUMMARY_TEXT,
    build_annotation,
    parse,
    serialize,
    tokenize,
)
from .rng import SplitMix64, derive_seed
from .vocab import Vocabulary, build_vocabulary

DEFAULT_SIDE = 16

LOW_POOL = ("texture", "edges", "lighting", "noise pattern", "compression artifact")
HIGH_POOL = ("geometry", "physics plausibility", "semantic consistency")

COUNT_WORDS = {2: "two", 3: "three", 4: "four", 5: "five"}
SHADE_WORDS = ("faint", "soft", "bright")
POSITION_WORDS = ("upper left", "upper right", "lower left", "lower right", "center")

CAPTION_TEMPLATES = (
    "A {shade} cluster of {count} blobs sits near the {pos} of the frame.",
    "The picture shows {count} {shade} blobs toward the {pos}.",
    "There are {count} rounded blobs, the largest one {shade}, in the {pos} region.",
)

DESCRIPTIONS = {
    # sentence wording is deliberately disambiguated for a small decoder: no
    # sentence opens with a word from any attribute name, and distinctive
    # content words are kept unique to one sentence wherever possible, so a
    # greedy decode cannot slide from an attribute name or a half-finished
    # sentence into a different one
    "texture": {
        "real": (
            "grain drifts gently from one blob into the next.",
            "surface detail remains irregular in every region.",
        ),
        "fake": (
            "a repeating checker fingerprint covers the whole surface.",
            "micro patterning locks onto an exact pixel lattice.",
        ),
    },
    "edges": {
        "real": (
            "blob outlines fade gradually into the dark.",
            "contours melt into the background without any halo.",
        ),
        "fake": (
            "stairstep jags track each blob outline.",
            "a jagged fringe clings to every contour.",
        ),
    },
    "lighting": {
        "real": (
            "brightness falls away radially from each blob center.",
            "illumination stays even across the entire frame.",
        ),
        "fake": (
            "glare pops between neighboring pixels with no source to explain it.",
            "shading alternates in a grid that ignores the blob centers.",
        ),
    },
    "noise pattern": {
        "real": (
            "residual speckle is smooth and carries no structure.",
            "nothing cyclic rides on top of the scene.",
        ),
        "fake": (
            "a low hum of alternating dots runs side to side.",
            "periodic dots march at one fixed spacing.",
        ),
    },
    "compression artifact": {
        "real": (
            "no blocky residue gathers around the shapes.",
            "the image shows neither ringing nor block boundaries.",
        ),
        "fake": (
            "chunky squares stamp the frame like a harsh encoder.",
            "ghost bands echo beside every sharp transition.",
        ),
    },
    "geometry": {
        "real": (
            "every blob keeps an unbroken round silhouette.",
            "shapes agree with a single viewpoint.",
        ),
        "fake": (
            "a hard cornered shape interrupts the rounded scenery.",
            "corner points jut out where no blob could make them.",
        ),
    },
    "physics plausibility": {
        "real": (
            "light fades the way diffuse sources demand.",
            "simple optics hold everywhere in this scene.",
        ),
        "fake": (
            "one region glows with no falloff, as if lit from nowhere.",
            "an unshaded patch floats at peak intensity.",
        ),
    },
    "semantic consistency": {
        "real": (
            "all elements belong to the same soft blob family.",
            "the scene tells one coherent story.",
        ),
        "fake": (
            "a rigid glowing motif overrides the gentle backdrop.",
            "two clashing families of shapes share one frame.",
        ),
    },
}


@dataclass(frozen=True)
class SyntheticImage:
    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"image must be a square grid, got shape {g.shape}")
        if g.min() < 0.0 or g.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "grid", g)

    @property
    def side(self) -> int:
        return self.grid.shape[0]


@dataclass(frozen=True)
class ArtifactProfile:
    low_level_strength: float
    high_level_anomaly: bool
    attributes: tuple

    def __post_init__(self):
        if not 0.0 <= self.low_level_strength <= 1.0:
            raise ValueError("low_level_strength must be in [0, 1]")
        object.__setattr__(self, "attributes", tuple(self.attributes))

    @property
    def is_fake(self) -> bool:
        return self.low_level_strength > 0.0 or self.high_level_anomaly


@dataclass(frozen=True)
class SyntheticSample:
    id: str
    image: SyntheticImage
    label: str
    profile: ArtifactProfile
    annotation: CoTDocument

    def __post_init__(self):
        if self.annotation.conclusion.verdict != self.label:
            raise ValueError(f"{self.id}: annotation verdict contradicts label")
        if (self.label == "fake") != self.profile.is_fake:
            raise ValueError(f"{self.id}: artifact profile contradicts label")

    @property
    def annotation_text(self) -> str:
        return serialize(self.annotation)


@dataclass(frozen=True)
class LoadedSample:
    """A dataset row read back from disk; the profile does not round-trip."""

    id: str
    image: SyntheticImage
    label: str
    annotation_text: str
    attributes: tuple


# ---------------------------------------------------------------------------
# image construction


def _render_blobs(g: SplitMix64, side: int):
    count = 2 + g.next_int(4)
    blobs = []
    for _ in range(count):
        blobs.append(
            (
                g.uniform(1.5, side - 2.5),   # cx
                g.uniform(1.5, side - 2.5),   # cy
                g.uniform(1.2, 3.2),          # sigma
                g.uniform(0.5, 1.0),          # amplitude
            )
        )
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    grid = np.zeros((side, side), dtype=np.float64)
    for cx, cy, sigma, amp in blobs:
        grid += amp * np.exp(-(((xs - cx) ** 2) + ((ys - cy) ** 2)) / (2.0 * sigma * sigma))
    peak = grid.max()
    if peak > 1.0:
        grid /= peak
    # diffuse scenes never reach full intensity; headroom above this ceiling
    # belongs exclusively to planted artifacts
    grid *= 0.60
    return grid, blobs


def _plant_checker(g: SplitMix64, grid: np.ndarray, difficulty: float) -> float:
    # kept faint: the alternation adds the same offset direction to every
    # encoder patch, and a large amplitude dominates the token geometry
    amp = (0.09 + 0.05 * g.next_float()) * (1.0 - 0.75 * difficulty)
    side = grid.shape[0]
    ys, xs = np.mgrid[0:side, 0:side]
    checker = ((xs + ys) % 2) * 2.0 - 1.0
    grid += amp * checker
    return amp


def _plant_motif(g: SplitMix64, grid: np.ndarray, difficulty: float) -> None:
    side = grid.shape[0]
    base = max(3, (9 * side) // 16)
    # difficulty shrinks the pasted square; the floor keeps the interior wide
    # enough that at least one aligned patch of the encoder grid lies fully
    # inside the flat region at any offset
    size = min(max(9, base - int(round(3 * difficulty))), side - 1)
    r = g.next_int(side - size)
    c = g.next_int(side - size)
    # flat near-white interior with a dark rim: far above the diffuse-scene
    # ceiling and unshaded, so the cutout reads as pasted
    value = 0.92 + 0.06 * g.next_float()
    patch = grid[r:r + size, c:c + size]
    patch[:] = value
    patch[0, :] = 0.06
    patch[-1, :] = 0.06
    patch[:, 0] = 0.06
    patch[:, -1] = 0.06


# ---------------------------------------------------------------------------
# annotation construction


def _caption(g: SplitMix64, blobs, side: int) -> str:
    count = COUNT_WORDS[len(blobs)]
    cx, cy, _, amp = max(blobs, key=lambda b: b[3])
    if amp < 0.67:
        shade = SHADE_WORDS[0]
    elif amp < 0.85:
        shade = SHADE_WORDS[1]
    else:
        shade = SHADE_WORDS[2]
    half = side / 2.0
    if abs(cx - half) < side / 6.0 and abs(cy - half) < side / 6.0:
        pos = "center"
    else:
        pos = ("upper " if cy < half else "lower ") + ("left" if cx < half else "right")
    template = g.choice(CAPTION_TEMPLATES)
    return template.format(count=count, shade=shade, pos=pos)


def _pick_attributes(g: SplitMix64, pool, k: int) -> list[str]:
    order = list(pool)
    g.shuffle(order)
    return order[:k]


def _records(g: SplitMix64, label: str, use_low: bool, use_high: bool):
    records = []
    if use_low:
        for attr in _pick_attributes(g, LOW_POOL, 2 + g.next_int(2)):
            text = g.choice(DESCRIPTIONS[attr][label])
            records.append(InterpretationRecord(attr, "low", text, label))
    if use_high:
        for attr in _pick_attributes(g, HIGH_POOL, 1 + g.next_int(2)):
            text = g.choice(DESCRIPTIONS[attr][label])
            records.append(InterpretationRecord(attr, "high", text, label))
    return records


def _make_sample(seed: int, label: str, index: int, difficulty: float, side: int) -> SyntheticSample:
    g = SplitMix64(derive_seed(seed, label, index))
    grid, blobs = _render_blobs(g, side)
    caption = _caption(g, blobs, side)
    # both labels draw the same routing split so which attribute pools the
    # annotation walks through carries no label information; only the per-step
    # sentence flavor (and for fakes the planted evidence) separates classes
    u = g.next_float()
    use_low = u < 0.4 or u >= 0.7
    use_high = u >= 0.4
    if label == "fake":
        strength = _plant_checker(g, grid, difficulty) if use_low else 0.0
        if use_high:
            _plant_motif(g, grid, difficulty)
        records = _records(g, "fake", use_low, use_high)
        profile = ArtifactProfile(strength, use_high, tuple(r.attribute for r in records))
    else:
        records = _records(g, "real", use_low, use_high)
        profile = ArtifactProfile(0.0, False, tuple(r.attribute for r in records))
    grid = np.clip(grid, 0.0, 1.0).round(6)
    doc = build_annotation(records, caption, label)
    return SyntheticSample(
        id=f"{label}-{index:05d}",
        image=SyntheticImage(grid),
        label=label,
        profile=profile,
        annotation=doc,
    )


def generate_dataset(
    seed: int,
    n_real: int,
    n_fake: int,
    difficulty: float = 0.0,
    side: int = DEFAULT_SIDE,
) -> list[SyntheticSample]:
    if n_real < 0 or n_fake < 0:
        raise ValueError("sample counts must be nonnegative")
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError("difficulty must be in [0, 1]")
    samples = [_make_sample(seed, "real", i, difficulty, side) for i in range(n_real)]
    samples += [_make_sample(seed, "fake", i, difficulty, side) for i in range(n_fake)]
    return samples


# ---------------------------------------------------------------------------
# disk format: JSON Lines


def sample_to_record(sample) -> dict:
    if isinstance(sample, SyntheticSample):
        annotation = sample.annotation_text
        attributes = list(sample.profile.attributes)
    else:
        annotation = sample.annotation_text
        attributes = list(sample.attributes)
    return {
        "id": sample.id,
        "image": {
            "side": sample.image.side,
            "values": [float(v) for v in sample.image.grid.reshape(-1)],
        },
        "label": sample.label,
        "annotation": annotation,
        "attributes": attributes,
    }


def write_dataset(samples, path) -> None:
    lines = [json.dumps(sample_to_record(s), sort_keys=True, separators=(",", ":")) for s in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def record_to_sample(record: dict) -> LoadedSample:
    side = record["image"]["side"]
    grid = np.asarray(record["image"]["values"], dtype=np.float64).reshape(side, side)
    return LoadedSample(
        id=record["id"],
        image=SyntheticImage(grid),
        label=record["label"],
        annotation_text=record["annotation"],
        attributes=tuple(record["attributes"]),
    )


def read_dataset(path) -> list[LoadedSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(record_to_sample(json.loads(line)))
    return samples


def validate_dataset(samples) -> list[str]:
    """Problems as '<id>: <what>' strings; empty list means clean."""
    problems = []
    seen = set()
    for s in samples:
        if s.id in seen:
            problems.append(f"{s.id}: duplicate id")
        seen.add(s.id)
        if s.label not in ("real", "fake"):
            problems.append(f"{s.id}: bad label {s.label!r}")
            continue
        try:
            doc = parse(s.annotation_text)
        except Exception as exc:
            problems.append(f"{s.id}: annotation does not parse ({exc})")
            continue
        if doc.conclusion.verdict != s.label:
            problems.append(f"{s.id}: annotation verdict {doc.conclusion.verdict} != label")
        for step in doc.low_level + doc.high_level:
            if step.attribute not in ATTRIBUTE_REGISTRY:
                problems.append(f"{s.id}: unknown attribute {step.attribute!r}")
    return problems


# ---------------------------------------------------------------------------
# statistics


@dataclass
class DatasetStats:
    total: int
    label_counts: dict
    attribute_hist: dict
    caption_length_hist: dict
    reasoning_length_hist: dict

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "label_counts": dict(self.label_counts),
            "attribute_hist": {k: dict(v) for k, v in self.attribute_hist.items()},
            "caption_length_hist": dict(self.caption_length_hist),
            "reasoning_length_hist": dict(self.reasoning_length_hist),
        }


def _doc_of(sample) -> CoTDocument:
    if isinstance(sample, SyntheticSample):
        return sample.annotation
    return parse(sample.annotation_text)


def dataset_stats(samples) -> DatasetStats:
    if not samples:
        raise ValueError("need at least one sample")
    label_counts = {"real": 0, "fake": 0}
    attribute_hist = {"real": {}, "fake": {}}
    caption_hist: dict[int, int] = {}
    reasoning_hist: dict[int, int] = {}
    for s in samples:
        label_counts[s.label] += 1
        doc = _doc_of(s)
        hist = attribute_hist[s.label]
        steps = doc.low_level + doc.high_level
        for step in steps:
            hist[step.attribute] = hist.get(step.attribute, 0) + 1
        clen = len(tokenize(doc.caption))
        rendered = [f"Low-level: {st.attribute}: {st.text}" for st in doc.low_level]
        rendered += [f"High-level: {st.attribute}: {st.text}" for st in doc.high_level]
        rlen = len(tokenize(" ".join(rendered)))
        caption_hist[clen] = caption_hist.get(clen, 0) + 1
        reasoning_hist[rlen] = reasoning_hist.get(rlen, 0) + 1
    return DatasetStats(
        total=len(samples),
        label_counts=label_counts,
        attribute_hist=attribute_hist,
        caption_length_hist=caption_hist,
        reasoning_length_hist=reasoning_hist,
    )


def high_frequency_energy(image: SyntheticImage) -> float:
    """Sum of squared adjacent-pixel differences, both axes."""
    g = image.grid
    return float(((g[:, 1:] - g[:, :-1]) ** 2).sum() + ((g[1:, :] - g[:-1, :]) ** 2).sum())


# ---------------------------------------------------------------------------
# vocabulary


def _caption_corpus():
    for template in CAPTION_TEMPLATES:
        for count in COUNT_WORDS.values():
            for shade in SHADE_WORDS:
                for pos in POSITION_WORDS:
                    yield template.format(count=count, shade=shade, pos=pos)


def default_vocabulary() -> Vocabulary:
    corpus = [SUMMARY_TEXT, "This image is real.", "This image is fake."]
    corpus.extend(ATTRIBUTE_REGISTRY)
    corpus.extend(_caption_corpus())
    for attr in DESCRIPTIONS:
        for label in ("real", "fake"):
            corpus.extend(DESCRIPTIONS[attr][label])
    return build_vocabulary(corpus)
