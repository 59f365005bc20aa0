"""The full detector: frozen dual encoders feeding a text decoder.

Images pass through two frozen vision branches. Their token outputs (and
the self-supervised branch's attention maps) are pure numpy and depend
only on the frozen weights, so callers encode a dataset once and reuse
the result across training steps. Everything after that point is part of
the autodiff graph: adapters, the fusion block, and the decoder.

The visual prefix handed to the decoder depends on ``fusion_mode``:

* ``clip_only``            adapted semantic tokens alone
* ``interleave``           semantic and self-supervised tokens alternating
* ``cross_attention``      fused, no attention-map bias
* ``cross_attention_bias`` fused with the map-derived score bias

All parameter groups are constructed for every mode, so two models that
share a seed start from identical weights regardless of which mode is
active; ablations then differ only in the path the forward pass takes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .cot import extract_verdict
from .cpm import (
    PatternNotFound,
    classification_loss,
    classification_pattern,
    classification_score,
    find_classification_index,
    score_verdict,
)
from .decoder import (
    Decoder,
    DecoderConfig,
    SequenceBatch,
    lm_loss,
    read_checkpoint,
    write_checkpoint,
)
from .encoders import DualEncoder, EncoderConfig
from .fusion import FusionBlock
from .rng import derive_seed
from .tensor import Tensor
from .vocab import Vocabulary

FUSION_MODES = ("clip_only", "interleave", "cross_attention", "cross_attention_bias")
LOSS_MODES = ("joint", "lm_only", "ce_only")


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 16
    patch_size: int = 4
    encoder_layers: int = 2
    encoder_heads: int = 4
    token_dim: int = 32
    text_dim: int = 32
    decoder_layers: int = 2
    decoder_heads: int = 4
    max_positions: int = 288
    max_len: int = 256
    fusion_mode: str = "cross_attention_bias"
    supervision_mode: str = "full_cot"
    bias_source_layer: int = -1
    tau: float = 10.0

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if not -self.encoder_layers <= self.bias_source_layer < self.encoder_layers:
            raise ValueError("bias_source_layer outside the encoder depth")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_side=self.image_side,
            patch_size=self.patch_size,
            layers=self.encoder_layers,
            heads=self.encoder_heads,
            token_dim=self.token_dim,
            text_dim=self.text_dim,
        )

    def decoder_config(self, vocab_size: int) -> DecoderConfig:
        return DecoderConfig(
            vocab_size=vocab_size,
            text_dim=self.text_dim,
            layers=self.decoder_layers,
            heads=self.decoder_heads,
            max_positions=self.max_positions,
            max_len=self.max_len,
        )

    @property
    def prefix_length(self) -> int:
        per_branch = (self.image_side // self.patch_size) ** 2
        return 2 * per_branch if self.fusion_mode == "interleave" else per_branch

    def to_dict(self) -> dict:
        return {
            "image_side": self.image_side,
            "patch_size": self.patch_size,
            "encoder_layers": self.encoder_layers,
            "encoder_heads": self.encoder_heads,
            "token_dim": self.token_dim,
            "text_dim": self.text_dim,
            "decoder_layers": self.decoder_layers,
            "decoder_heads": self.decoder_heads,
            "max_positions": self.max_positions,
            "max_len": self.max_len,
            "fusion_mode": self.fusion_mode,
            "supervision_mode": self.supervision_mode,
            "bias_source_layer": self.bias_source_layer,
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_modes(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class EncodedBatch:
    """Frozen-branch outputs for a batch; safe to cache and slice."""

    semantic: np.ndarray
    selfsup: np.ndarray
    maps: np.ndarray

    def take(self, indices) -> "EncodedBatch":
        idx = np.asarray(indices)
        return EncodedBatch(self.semantic[idx], self.selfsup[idx], self.maps[idx])

    @property
    def count(self) -> int:
        return self.semantic.shape[0]


@dataclass
class Prediction:
    text: str
    text_verdict: str
    p_fake: Optional[float]
    head_verdict: str


class ForgeryModel:
    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int, dtype=np.float32):
        self.config = config
        self.vocab = vocab
        self.seed = seed
        self.dtype = dtype
        self.encoders = DualEncoder(config.encoder_config(), seed, dtype)
        self.fusion = FusionBlock(config.text_dim, config.encoder_heads, seed, dtype)
        self.decoder = Decoder(config.decoder_config(len(vocab)), seed, dtype)
        self.pattern = classification_pattern(vocab, config.supervision_mode)

    # ------------------------------------------------------------------
    # parameters

    def trainable_params(self) -> dict[str, Tensor]:
        out = dict(self.encoders.trainable_params())
        for k, t in self.fusion.params().items():
            out[f"fusion.{k}"] = t
        for k, t in self.decoder.params().items():
            out[f"decoder.{k}"] = t
        return out

    def frozen_params(self) -> dict[str, np.ndarray]:
        return self.encoders.frozen_params()

    # ------------------------------------------------------------------
    # forward pieces

    def encode_images(self, images: np.ndarray) -> EncodedBatch:
        """Run both frozen branches once; the result is reusable."""
        sem = self.encoders.encode("semantic", images)
        ss = self.encoders.encode("selfsup", images)
        maps = ss.layer_maps[self.config.bias_source_layer]
        return EncodedBatch(semantic=sem.tokens, selfsup=ss.tokens, maps=maps)

    def prefix(self, enc: EncodedBatch) -> Tensor:
        c = self.encoders.adapt("semantic", enc.semantic)
        mode = self.config.fusion_mode
        if mode == "clip_only":
            return c
        s = self.encoders.adapt("selfsup", enc.selfsup)
        if mode == "interleave":
            n, L, d = c.shape
            stacked = T.concat(
                [T.reshape(c, (n, L, 1, d)), T.reshape(s, (n, L, 1, d))], axis=2
            )
            return T.reshape(stacked, (n, 2 * L, d))
        if mode == "cross_attention":
            return self.fusion.fuse(c, s, maps=None)
        return self.fusion.fuse(c, s, maps=enc.maps)

    def forward(self, enc: EncodedBatch, token_ids: np.ndarray) -> Tensor:
        return self.decoder.forward_teacher_forced(self.prefix(enc), token_ids)

    def losses(self, enc: EncodedBatch, seq: SequenceBatch, fake_flags, loss_mode: str = "joint") -> dict:
        if loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        logits = self.forward(enc, seq.token_ids)
        lm = lm_loss(logits, seq)
        ce = classification_loss(
            logits, seq.token_ids, fake_flags, self.vocab, self.pattern, self.config.tau
        )
        if loss_mode == "joint":
            total = T.add(lm, ce)
        elif loss_mode == "lm_only":
            total = lm
        else:
            total = ce
        return {"total": total, "lm": lm, "ce": ce}

    # ------------------------------------------------------------------
    # inference

    def prefix_array(self, enc: EncodedBatch) -> np.ndarray:
        with T.no_grad():
            return self.prefix(enc).data

    def predict_from_prefix(self, prefix: np.ndarray, temperature: float = 0.0,
                            seeds=None) -> list[Prediction]:
        ids, step_logits = self.decoder.generate_batch(
            prefix,
            self.vocab.bos_id,
            self.vocab.eos_id,
            max_len=self.config.max_len,
            temperature=temperature,
            seeds=seeds,
            collect_logits=True,
        )
        out = []
        for r in range(len(ids)):
            text = self.vocab.decode_text(ids[r])
            p_fake = None
            try:
                slot = find_classification_index(ids[r], self.pattern)
                if slot < len(step_logits[r]):
                    p_fake = classification_score(
                        step_logits[r][slot], self.vocab, self.config.tau
                    )
            except PatternNotFound:
                pass
            head = "fail" if p_fake is None else (score_verdict(p_fake) or "fail")
            out.append(Prediction(text, extract_verdict(text), p_fake, head))
        return out

    def predict(self, enc: EncodedBatch, temperature: float = 0.0,
                base_seed: int = 0) -> list[Prediction]:
        pre = self.prefix_array(enc)
        seeds = None
        if temperature > 0:
            seeds = [derive_seed(base_seed, "sample", r) for r in range(enc.count)]
        return self.predict_from_prefix(pre, temperature, seeds)

    # ------------------------------------------------------------------
    # persistence

    def save(self, path) -> None:
        arrays = {k: t.data for k, t in self.trainable_params().items()}
        arrays.update(self.frozen_params())
        extra = {
            "config": self.config.to_dict(),
            "vocab": [self.vocab.token_of(i) for i in range(len(self.vocab))],
            "seed": self.seed,
        }
        write_checkpoint(path, arrays, extra=extra)

    @classmethod
    def load(cls, path) -> "ForgeryModel":
        arrays, extra = read_checkpoint(path)
        config = ModelConfig.from_dict(extra["config"])
        vocab = Vocabulary(extra["vocab"])
        model = cls(config, vocab, seed=int(extra.get("seed", 0)))
        trainable = model.trainable_params()
        frozen = model.frozen_params()
        expected = set(trainable) | set(frozen)
        if set(arrays) != expected:
            missing = expected - set(arrays)
            surplus = set(arrays) - expected
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)[:3]}, surplus {sorted(surplus)[:3]}")
        for k, t in trainable.items():
            t.data = arrays[k]
        for branch, enc in (("semantic", model.encoders.semantic),
                            ("selfsup", model.encoders.selfsup)):
            for name in enc.params:
                enc.params[name] = arrays[f"encoder_{branch}.{name}"]
        return model
