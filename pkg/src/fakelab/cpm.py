"""Classification head read off the language-model logits.

The verdict token ("real"/"fake") sits right after a fixed token pattern
("This image is", preceded by the conclusion tag when the model is trained
on staged text). The logit row that predicts that slot doubles as a binary
classifier: the two verdict logits are divided by a temperature and pushed
through a two-way softmax. No separate classification parameters exist.

``find_classification_index`` locates the earliest pattern occurrence and
returns the index of the verdict slot itself.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .vocab import Vocabulary

SUPERVISION_MODES = ("binary_answer", "interpretation_no_cot", "full_cot")


class PatternNotFound(ValueError):
    """The answer pattern does not occur in a token sequence."""


def classification_pattern(vocab: Vocabulary, supervision_mode: str) -> tuple:
    """Token ids whose next position holds the verdict."""
    if supervision_mode not in SUPERVISION_MODES:
        raise ValueError(f"unknown supervision mode {supervision_mode!r}")
    words = ["This", "image", "is"]
    if supervision_mode == "full_cot":
        words.insert(0, "<CONCLUSION>")
    return tuple(vocab.id_of(w) for w in words)


def find_classification_index(token_ids, pattern) -> int:
    """Index of the verdict slot: end of the earliest pattern match."""
    ids = list(token_ids)
    pat = list(pattern)
    if not pat:
        raise ValueError("empty pattern")
    for i in range(len(ids) - len(pat) + 1):
        if ids[i : i + len(pat)] == pat:
            return i + len(pat)
    raise PatternNotFound(f"pattern {pat} not in sequence of length {len(ids)}")


def classification_loss(
    logits: Tensor,
    token_ids: np.ndarray,
    fake_flags,
    vocab: Vocabulary,
    pattern,
    tau: float,
) -> Tensor:
    """Mean two-way cross-entropy at each sample's verdict slot.

    softmax over (z_real/tau, z_fake/tau) reduces to
    softplus((z_wrong - z_right)/tau), which touches exactly two logits
    per sample.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    ids = np.asarray(token_ids)
    n = ids.shape[0]
    fake = np.asarray(fake_flags, dtype=bool)
    if fake.shape != (n,):
        raise ValueError("one label flag per sample")
    slots = np.empty(n, dtype=np.int64)
    for r in range(n):
        slots[r] = find_classification_index(ids[r], pattern)
        if slots[r] >= logits.shape[1]:
            raise PatternNotFound(f"verdict slot {slots[r]} beyond logits for row {r}")
    rows = np.arange(n)
    right = np.where(fake, vocab.fake_id, vocab.real_id)
    wrong = np.where(fake, vocab.real_id, vocab.fake_id)
    z_right = T.select_entries(logits, (rows, slots, right))
    z_wrong = T.select_entries(logits, (rows, slots, wrong))
    gap = T.scale(z_wrong - z_right, 1.0 / float(tau))
    return T.mean_all(T.softplus(gap))


def classification_score(logit_row: np.ndarray, vocab: Vocabulary, tau: float) -> float:
    """p(fake) from one logit row: sigmoid of the tempered verdict gap."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = np.asarray(logit_row, dtype=np.float64)
    gap = (z[vocab.fake_id] - z[vocab.real_id]) / float(tau)
    return float(1.0 / (1.0 + np.exp(-gap)))


def score_verdict(p_fake: float):
    """"real" or "fake"; None on an exact tie."""
    if p_fake > 0.5:
        return "fake"
    if p_fake < 0.5:
        return "real"
    return None
