"""Bias-guided cross-attention fusion of the two adapted token streams.

Semantic-branch tokens act as queries, selfsup-branch tokens as keys and
values, with no learned query/key/value projections: the adapters upstream
already supply the learned projection capacity, and the attention form is
applied to their outputs directly.

The selfsup branch's attention maps M enter as an additive pre-softmax
bias B = MLP(log M). The MLP mixes across the head channel pointwise at
each (query, key) position, so each head's bias is a learned combination
of what every head of the frozen encoder attended to. Its final layer is
zero-initialized: fusion starts exactly at plain cross-attention and the
bias path has to earn its influence.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import derive_seed
from .tensor import Tensor


class FusionBlock:
    def __init__(self, text_dim: int, heads: int, seed: int, dtype=np.float32):
        if text_dim % heads != 0:
            raise ValueError("text_dim must be divisible by heads")
        self.d = text_dim
        self.heads = heads
        rng = np.random.default_rng(derive_seed(seed, "fusion"))
        d, H = text_dim, heads
        hidden = 4 * H

        def init(*shape, fan_in):
            return Tensor(
                (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype),
                requires_grad=True,
            )

        def zeros(*shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

        # The final layer carries no additive constant: a per-head constant
        # shifts every key's score in a row equally and cancels in the
        # softmax, so such a parameter could never receive gradient.
        self.bias_w1 = init(H, hidden, fan_in=H)
        self.bias_b1 = zeros(hidden)
        self.bias_w2 = zeros(hidden, H)
        self.ffn_w1 = init(d, 4 * d, fan_in=d)
        self.ffn_b1 = zeros(4 * d)
        self.ffn_w2 = init(4 * d, d, fan_in=4 * d)
        self.ffn_b2 = zeros(d)
        self.ln1_g = ones(d)
        self.ln1_b = zeros(d)
        self.ln2_g = ones(d)
        self.ln2_b = zeros(d)

    def params(self) -> dict[str, Tensor]:
        return {
            "bias_w1": self.bias_w1, "bias_b1": self.bias_b1,
            "bias_w2": self.bias_w2,
            "ffn_w1": self.ffn_w1, "ffn_b1": self.ffn_b1,
            "ffn_w2": self.ffn_w2, "ffn_b2": self.ffn_b2,
            "ln1_g": self.ln1_g, "ln1_b": self.ln1_b,
            "ln2_g": self.ln2_g, "ln2_b": self.ln2_b,
        }

    def compute_bias(self, maps) -> Tensor:
        """B = MLP(log M), acting on the head channel at each (q, k) cell.

        maps: [n, H, L, L] attention weights in [0, 1]; zeros are clamped
        inside the log so the bias path stays finite.
        """
        m = maps if isinstance(maps, Tensor) else Tensor(np.asarray(maps))
        if m.ndim != 4 or m.shape[1] != self.heads:
            raise T.ShapeError(f"expected maps [n, {self.heads}, L, L], got {m.shape}")
        x = T.log_clamped(m)
        x = T.transpose(x, (0, 2, 3, 1))
        h = T.gelu(T.add(T.matmul(x, self.bias_w1), self.bias_b1))
        b = T.matmul(h, self.bias_w2)
        return T.transpose(b, (0, 3, 1, 2))

    def _split_heads(self, x: Tensor, n: int, L: int) -> Tensor:
        dh = self.d // self.heads
        return T.transpose(T.reshape(x, (n, L, self.heads, dh)), (0, 2, 1, 3))

    def fuse(self, f_c: Tensor, f_d: Tensor, maps=None) -> Tensor:
        """Cross-attend queries f_c over keys/values f_d, bias from maps.

        maps=None runs plain cross-attention (the bias-free ablation path).
        """
        if f_c.shape != f_d.shape:
            raise T.ShapeError(f"branch token shapes differ: {f_c.shape} vs {f_d.shape}")
        if f_c.ndim != 3 or f_c.shape[-1] != self.d:
            raise T.ShapeError(f"expected tokens [n, L, {self.d}], got {f_c.shape}")
        n, L, d = f_c.shape
        dh = d // self.heads
        q = self._split_heads(f_c, n, L)
        k = self._split_heads(f_d, n, L)
        v = self._split_heads(f_d, n, L)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        if maps is not None:
            scores = T.add(scores, self.compute_bias(maps))
        att = T.softmax_rows(scores)
        ctx = T.matmul(att, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, L, d))
        merged = T.layer_norm(T.add(ctx, f_c), self.ln1_g, self.ln1_b)
        h = T.gelu(T.add(T.matmul(merged, self.ffn_w1), self.ffn_b1))
        ffn = T.add(T.matmul(h, self.ffn_w2), self.ffn_b2)
        return T.layer_norm(T.add(ffn, merged), self.ln2_g, self.ln2_b)

    def attention_rows(self, f_c: Tensor, f_d: Tensor, maps=None) -> np.ndarray:
        """The post-softmax attention weights, for inspection and tests."""
        n, L, d = f_c.shape
        dh = d // self.heads
        with T.no_grad():
            q = self._split_heads(f_c, n, L)
            k = self._split_heads(f_d, n, L)
            scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
            if maps is not None:
                scores = T.add(scores, self.compute_bias(maps))
            return T.softmax_rows(scores).data
