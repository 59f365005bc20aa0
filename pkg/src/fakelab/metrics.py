"""Text and detection metrics for the evaluation harness.

Everything here is a pure function over plain values. Degenerate inputs
(empty candidate, zero vector) return documented fallbacks instead of
raising, because the harness must survive whatever a half-trained decoder
emits.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

VERDICT_VALUES = ("real", "fake", "fail")


def _words(text: str) -> list[str]:
    return text.lower().split()


def detection_accuracy(verdicts: Sequence[str], labels: Sequence[str]) -> tuple[float, float]:
    """(accuracy %, fail %). A fail verdict is never correct."""
    if len(verdicts) != len(labels):
        raise ValueError(f"{len(verdicts)} verdicts vs {len(labels)} labels")
    if not verdicts:
        raise ValueError("need at least one sample")
    correct = sum(1 for v, y in zip(verdicts, labels) if v == y and v != "fail")
    failed = sum(1 for v in verdicts if v == "fail")
    n = len(verdicts)
    return 100.0 * correct / n, 100.0 * failed / n


def bleu1(candidate: str, reference: str) -> float:
    """Clipped unigram precision times the brevity penalty.

    Tokenization is whitespace, case-folded; single reference.
    """
    cand = _words(candidate)
    ref = _words(reference)
    if not ref:
        raise ValueError("reference must be nonempty")
    if not cand:
        return 0.0
    ref_counts = Counter(ref)
    clipped = sum(min(c, ref_counts[w]) for w, c in Counter(cand).items())
    precision = clipped / len(cand)
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return precision * bp


def _lcs_len(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS F-measure with beta = 1."""
    cand = _words(candidate)
    ref = _words(reference)
    if not ref:
        raise ValueError("reference must be nonempty")
    if not cand:
        return 0.0
    lcs = _lcs_len(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)


def bag_embedder(text: str) -> dict[str, float]:
    """L2-normalized term-frequency bag; the default CSS embedder."""
    counts = Counter(_words(text))
    norm = math.sqrt(sum(c * c for c in counts.values()))
    if norm == 0.0:
        return {}
    return {w: c / norm for w, c in counts.items()}


def css(candidate: str, reference: str, embedder: Callable = bag_embedder) -> float:
    """Cosine similarity of embedded texts; 0 if either embeds to zero.

    The embedder may return either a sparse {term: weight} dict or a dense
    vector; anything stronger than the default bag model plugs in here.
    """
    a, b = embedder(candidate), embedder(reference)
    if isinstance(a, dict):
        dot = sum(w * b.get(t, 0.0) for t, w in a.items())
        na = math.sqrt(sum(w * w for w in a.values()))
        nb = math.sqrt(sum(w * w for w in b.values()))
    else:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        dot = float(a @ b)
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


# ---------------------------------------------------------------------------
# aggregate report


@dataclass
class EvalReport:
    """Detection and reasoning-quality numbers over one evaluation run."""

    sample_count: int
    accuracy_percent: dict[str, float]
    average_accuracy_percent: float
    fail_rate_percent: float
    bleu1: float
    rouge_l: float
    css: float
    head_accuracy_percent: float = 0.0
    head_agreement_percent: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "accuracy_percent": dict(self.accuracy_percent),
            "average_accuracy_percent": self.average_accuracy_percent,
            "fail_rate_percent": self.fail_rate_percent,
            "bleu1": self.bleu1,
            "rouge_l": self.rouge_l,
            "css": self.css,
            "head_accuracy_percent": self.head_accuracy_percent,
            "head_agreement_percent": self.head_agreement_percent,
            "extras": dict(self.extras),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            sample_count=d["sample_count"],
            accuracy_percent=dict(d["accuracy_percent"]),
            average_accuracy_percent=d["average_accuracy_percent"],
            fail_rate_percent=d["fail_rate_percent"],
            bleu1=d["bleu1"],
            rouge_l=d["rouge_l"],
            css=d["css"],
            head_accuracy_percent=d.get("head_accuracy_percent", 0.0),
            head_agreement_percent=d.get("head_agreement_percent", 0.0),
            extras=dict(d.get("extras", {})),
        )

    def table(self) -> str:
        rows = [("samples", f"{self.sample_count}")]
        for subset in sorted(self.accuracy_percent):
            rows.append((f"accuracy[{subset}] %", f"{self.accuracy_percent[subset]:.2f}"))
        rows += [
            ("accuracy[avg] %", f"{self.average_accuracy_percent:.2f}"),
            ("fail %", f"{self.fail_rate_percent:.2f}"),
            ("BLEU-1", f"{self.bleu1:.4f}"),
            ("ROUGE-L", f"{self.rouge_l:.4f}"),
            ("CSS", f"{self.css:.4f}"),
            ("head accuracy %", f"{self.head_accuracy_percent:.2f}"),
            ("head agreement %", f"{self.head_agreement_percent:.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>8}" for k, v in rows)


def build_report(
    verdicts: Sequence[str],
    labels: Sequence[str],
    subsets: Sequence[str],
    reasoning_pairs: Sequence[tuple[str, str]],
    head_verdicts: Sequence[str] | None = None,
) -> EvalReport:
    """Fold per-sample outcomes into one report.

    ``subsets`` names the evaluation slice each sample belongs to (a single
    name for a homogeneous set). ``reasoning_pairs`` holds (candidate,
    reference) reasoning texts; empty candidates score 0 by the metric
    conventions above.
    """
    _, fail_pct = detection_accuracy(verdicts, labels)
    per_subset: dict[str, float] = {}
    for name in sorted(set(subsets)):
        vs = [v for v, s in zip(verdicts, subsets) if s == name]
        ys = [y for y, s in zip(labels, subsets) if s == name]
        per_subset[name], _ = detection_accuracy(vs, ys)
    avg = sum(per_subset.values()) / len(per_subset)
    bleus = [bleu1(c, r) for c, r in reasoning_pairs]
    rouges = [rouge_l(c, r) for c, r in reasoning_pairs]
    csss = [css(c, r) for c, r in reasoning_pairs]
    head_acc = 0.0
    head_agree = 0.0
    if head_verdicts is not None:
        head_acc, _ = detection_accuracy(head_verdicts, labels)
        agree = sum(1 for a, b in zip(head_verdicts, verdicts) if a == b)
        head_agree = 100.0 * agree / len(verdicts)
    return EvalReport(
        sample_count=len(verdicts),
        accuracy_percent=per_subset,
        average_accuracy_percent=avg,
        fail_rate_percent=fail_pct,
        bleu1=float(np.mean(bleus)) if bleus else 0.0,
        rouge_l=float(np.mean(rouges)) if rouges else 0.0,
        css=float(np.mean(csss)) if csss else 0.0,
        head_accuracy_percent=head_acc,
        head_agreement_percent=head_agree,
    )


# ---------------------------------------------------------------------------
# consistency under sampling


def inconsistency_from_verdicts(rounds_per_sample: Sequence[Sequence[str]]) -> float:
    """Mean minority-verdict proportion across samples, as a percent.

    Each inner sequence holds one sample's verdicts over repeated sampled
    runs. The majority verdict (ties broken by the fixed verdict order) is
    the baseline; everything else is minority. Order within a sample does
    not matter.
    """
    if not rounds_per_sample:
        raise ValueError("need at least one sample")
    props = []
    for verdicts in rounds_per_sample:
        if len(verdicts) < 2:
            raise ValueError("need at least two rounds per sample")
        counts = Counter(verdicts)
        majority = max(counts.values())
        props.append(1.0 - majority / len(verdicts))
    return 100.0 * float(np.mean(props))


def consistency_analysis(run_rounds: Callable, samples, rounds: int, temperature: float) -> float:
    """Inconsistency of sampled verdicts over repeated seeded rounds.

    ``run_rounds(samples, rounds, temperature)`` comes from the model side
    and returns one verdict list per sample; this function only aggregates,
    so the caller may batch or parallelize rounds however it likes.
    """
    if rounds < 2:
        raise ValueError("rounds must be >= 2")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    per_sample = run_rounds(samples, rounds, temperature)
    return inconsistency_from_verdicts(per_sample)
