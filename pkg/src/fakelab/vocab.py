"""Word-level vocabulary with guaranteed single-token control words.

The stage tags, "real", "fake", and the answer-template words each map to
exactly one id, so the classification head can read a verdict from a single
logit row instead of stitching subwords together.
"""

from __future__ import annotations

import json
from pathlib import Path

from .cot import CLOSE_TAGS, OPEN_TAGS, STAGES, detokenize, tokenize

PAD, BOS, EOS, UNK = "<PAD>", "<BOS>", "<EOS>", "<UNK>"
SPECIALS = (PAD, BOS, EOS, UNK)
TAG_TOKENS = tuple(OPEN_TAGS[s] for s in STAGES) + tuple(CLOSE_TAGS[s] for s in STAGES)
PUNCTUATION = (".", ",", ":", ";", "!", "?", "(", ")")
CORE_WORDS = ("This", "image", "is", "real", "fake", "Low-level", "High-level")


class Vocabulary:
    """Immutable token ↔ id bijection; ids are dense from 0."""

    def __init__(self, tokens):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        for required in SPECIALS + TAG_TOKENS + ("real", "fake"):
            if required not in tokens:
                raise ValueError(f"vocabulary missing required token {required!r}")
        self._tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> tuple:
        return self._tokens

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary")

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise IndexError(f"id {idx} outside vocabulary of size {len(self._tokens)}")
        return self._tokens[idx]

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def real_id(self) -> int:
        return self._ids["real"]

    @property
    def fake_id(self) -> int:
        return self._ids["fake"]

    def encode(self, tokens) -> list[int]:
        unk = self._ids[UNK]
        return [self._ids.get(t, unk) for t in tokens]

    def encode_text(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    def decode(self, ids) -> list[str]:
        return [self.token_of(i) for i in ids]

    def decode_text(self, ids) -> str:
        """Back to text, dropping padding and sequence-control tokens."""
        keep = [self.token_of(i) for i in ids]
        return detokenize([t for t in keep if t not in (PAD, BOS, EOS)])

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(dict(self._ids), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        mapping = json.loads(Path(path).read_text(encoding="utf-8"))
        ids = sorted(mapping.values())
        if ids != list(range(len(mapping))):
            raise ValueError("vocabulary ids must be dense from 0")
        tokens = [None] * len(mapping)
        for tok, i in mapping.items():
            tokens[i] = tok
        return cls(tokens)


def build_vocabulary(corpus_texts) -> Vocabulary:
    """Specials and control words first, then sorted corpus words."""
    seen = set(SPECIALS) | set(TAG_TOKENS) | set(PUNCTUATION) | set(CORE_WORDS)
    extra = set()
    for text in corpus_texts:
        for tok in tokenize(text):
            if tok not in seen:
                extra.add(tok)
    ordered = SPECIALS + TAG_TOKENS + PUNCTUATION + CORE_WORDS + tuple(sorted(extra))
    return Vocabulary(ordered)
