"""Gradient integrity suite: finite differences against every graph.

Each entry builds a small double-precision instance of one differentiable
graph and checks analytic gradients for every trainable parameter in it,
plus the graph inputs. Dimensions are kept small so the whole suite runs
in well under two minutes, but the graphs are the real ones.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .cpm import classification_loss, classification_pattern
from .decoder import SequenceBatch, lm_loss
from .encoders import Adapter, EncoderConfig
from .fusion import FusionBlock
from .model import ForgeryModel, ModelConfig
from .tensor import Tensor
from .vocab import (
    CORE_WORDS,
    PUNCTUATION,
    SPECIALS,
    TAG_TOKENS,
    Vocabulary,
)


def _check_vocab() -> Vocabulary:
    return Vocabulary(SPECIALS + TAG_TOKENS + PUNCTUATION + CORE_WORDS + ("tiny", "check"))


def _tiny_model(vocab: Vocabulary) -> ForgeryModel:
    config = ModelConfig(
        image_side=8, patch_size=4, encoder_layers=1, encoder_heads=2,
        token_dim=8, text_dim=8, decoder_layers=1, decoder_heads=2,
        max_positions=48, max_len=24,
    )
    return ForgeryModel(config, vocab, seed=101, dtype=np.float64)


def _target_sequence(vocab: Vocabulary, n: int):
    text = "<CONCLUSION> This image is fake. </CONCLUSION>"
    ids = [vocab.bos_id] + vocab.encode_text(text) + [vocab.eos_id]
    token_ids = np.tile(np.asarray(ids, dtype=np.int64), (n, 1))
    mask = np.tile([False] + [True] * (len(ids) - 1), (n, 1))
    return SequenceBatch(token_ids, mask)


def check_adapters() -> float:
    rng = np.random.default_rng(7)
    config = EncoderConfig(image_side=8, patch_size=4, layers=1, heads=2,
                           token_dim=8, text_dim=8)
    adapter = Adapter(config, "semantic", seed=3, dtype=np.float64)
    x = Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True)
    w = rng.standard_normal((2, 4, 8))
    wrt = [x] + list(adapter.params().values())
    return T.grad_check(lambda: T.sum_all(T.mul(adapter(x), Tensor(w))), wrt)


def check_compute_bias() -> float:
    rng = np.random.default_rng(11)
    block = FusionBlock(text_dim=8, heads=2, seed=5, dtype=np.float64)
    # zero-initialized final layer would hide half the chain
    block.params()["bias_w2"].data = rng.standard_normal((8, 2)) * 0.3
    maps = rng.uniform(0.05, 1.0, size=(2, 2, 3, 3))
    maps /= maps.sum(axis=-1, keepdims=True)
    w = rng.standard_normal((2, 2, 3, 3))
    wrt = [block.params()[k] for k in ("bias_w1", "bias_b1", "bias_w2")]
    return T.grad_check(lambda: T.sum_all(T.mul(block.compute_bias(maps), Tensor(w))), wrt)


def check_fuse() -> float:
    rng = np.random.default_rng(13)
    block = FusionBlock(text_dim=8, heads=2, seed=5, dtype=np.float64)
    block.params()["bias_w2"].data = rng.standard_normal((8, 2)) * 0.3
    f_c = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
    f_d = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
    maps = rng.uniform(0.05, 1.0, size=(2, 2, 3, 3))
    maps /= maps.sum(axis=-1, keepdims=True)
    w = rng.standard_normal((2, 3, 8))
    wrt = [f_c, f_d] + list(block.params().values())
    return T.grad_check(
        lambda: T.sum_all(T.mul(block.fuse(f_c, f_d, maps), Tensor(w))), wrt
    )


def _full_graph_pieces():
    vocab = _check_vocab()
    model = _tiny_model(vocab)
    rng = np.random.default_rng(17)
    images = rng.uniform(0.0, 1.0, size=(2, 8, 8))
    enc = model.encode_images(images)
    # a strong random bias head exercises the map branch of the graph
    model.fusion.params()["bias_w2"].data = rng.standard_normal((8, 2)) * 0.3
    seq = _target_sequence(vocab, n=2)
    return vocab, model, enc, seq


def check_lm_graph() -> float:
    vocab, model, enc, seq = _full_graph_pieces()
    wrt = list(model.trainable_params().values())
    return T.grad_check(
        lambda: lm_loss(model.forward(enc, seq.token_ids), seq), wrt
    )


def check_classification_graph() -> float:
    vocab, model, enc, seq = _full_graph_pieces()
    fake = np.array([True, False])
    wrt = list(model.trainable_params().values())
    return T.grad_check(
        lambda: classification_loss(
            model.forward(enc, seq.token_ids), seq.token_ids, fake,
            vocab, model.pattern, tau=10.0,
        ),
        wrt,
    )


GRAPH_CHECKS = {
    "adapters": check_adapters,
    "compute_bias": check_compute_bias,
    "fuse": check_fuse,
    "forward_teacher_forced+lm_loss": check_lm_graph,
    "classification_loss": check_classification_graph,
}


def gradient_suite() -> dict[str, float]:
    """Max relative finite-difference error per graph."""
    return {name: fn() for name, fn in GRAPH_CHECKS.items()}
