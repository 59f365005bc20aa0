"""Dual-branch visual encoding: two frozen patch transformers plus adapters.

The "semantic" branch stands in for a pretrained semantic encoder and the
"selfsup" branch for a self-supervised one. Neither has pretrained weights
at this scale, so complementarity is emulated the only honest way left:
each branch gets its own randomly initialized patch-embedding filters and
attention weights (branch-specific seeds), so the two expose different
statistics of the same image. Both are frozen after initialization; only
the adapters that project their tokens into the text space train.

The selfsup branch also reports its per-layer attention maps; the fusion
module turns the chosen layer's maps into an attention bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import derive_seed
from .tensor import Tensor

BRANCHES = ("semantic", "selfsup")


@dataclass(frozen=True)
class EncoderConfig:
    image_side: int = 16
    patch_size: int = 4
    layers: int = 2
    heads: int = 4
    token_dim: int = 32
    text_dim: int = 32

    def __post_init__(self):
        if self.image_side % self.patch_size != 0:
            raise ValueError("image side must be divisible by patch size")
        if self.token_dim % self.heads != 0:
            raise ValueError("token_dim must be divisible by heads")
        if self.text_dim % self.heads != 0:
            raise ValueError("text_dim must be divisible by heads")
        if self.layers < 1:
            raise ValueError("need at least one encoder layer")

    @property
    def tokens_per_image(self) -> int:
        return (self.image_side // self.patch_size) ** 2

    def to_dict(self) -> dict:
        return {
            "image_side": self.image_side,
            "patch_size": self.patch_size,
            "layers": self.layers,
            "heads": self.heads,
            "token_dim": self.token_dim,
            "text_dim": self.text_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class VisualTokens:
    """Raw (pre-adapter) tokens plus the branch's attention maps.

    ``attention_maps`` holds the final layer's maps; ``layer_maps`` keeps
    every layer so the bias source layer stays selectable.
    """

    tokens: np.ndarray
    attention_maps: np.ndarray | None
    layer_maps: tuple = ()


def _np_layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + T.LN_EPS) + shift


def _np_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _np_gelu(x: np.ndarray) -> np.ndarray:
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


class FrozenEncoder:
    """A small ViT over image patches; parameters fixed at construction."""

    def __init__(self, config: EncoderConfig, branch: str, seed: int, dtype=np.float32):
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
        self.config = config
        self.branch = branch
        self.dtype = dtype
        rng = np.random.default_rng(derive_seed(seed, "encoder", branch))
        D = config.token_dim
        P = config.patch_size * config.patch_size
        L = config.tokens_per_image

        def init(*shape, fan_in):
            return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)

        p: dict[str, np.ndarray] = {
            "patch_w": init(P, D, fan_in=P),
            "patch_b": np.zeros(D, dtype=dtype),
            "pos": init(L, D, fan_in=D),
        }
        for i in range(config.layers):
            p[f"l{i}.ln1_g"] = np.ones(D, dtype=dtype)
            p[f"l{i}.ln1_b"] = np.zeros(D, dtype=dtype)
            p[f"l{i}.qkv_w"] = init(D, 3 * D, fan_in=D)
            p[f"l{i}.qkv_b"] = np.zeros(3 * D, dtype=dtype)
            p[f"l{i}.out_w"] = init(D, D, fan_in=D)
            p[f"l{i}.out_b"] = np.zeros(D, dtype=dtype)
            p[f"l{i}.ln2_g"] = np.ones(D, dtype=dtype)
            p[f"l{i}.ln2_b"] = np.zeros(D, dtype=dtype)
            p[f"l{i}.ffn1_w"] = init(D, 4 * D, fan_in=D)
            p[f"l{i}.ffn1_b"] = np.zeros(4 * D, dtype=dtype)
            p[f"l{i}.ffn2_w"] = init(4 * D, D, fan_in=4 * D)
            p[f"l{i}.ffn2_b"] = np.zeros(D, dtype=dtype)
        p["lnf_g"] = np.ones(D, dtype=dtype)
        p["lnf_b"] = np.zeros(D, dtype=dtype)
        self.params = p

    def _patchify(self, images: np.ndarray) -> np.ndarray:
        n, S, _ = images.shape
        ps = self.config.patch_size
        grid = S // ps
        x = images.reshape(n, grid, ps, grid, ps)
        x = x.transpose(0, 1, 3, 2, 4).reshape(n, grid * grid, ps * ps)
        return x.astype(self.dtype)

    def encode(self, images: np.ndarray) -> VisualTokens:
        """images: [n, S, S] in [0,1]. Pure numpy; nothing here trains."""
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim != 3 or images.shape[1:] != (self.config.image_side,) * 2:
            raise T.ShapeError(
                f"expected images [n, {self.config.image_side}, {self.config.image_side}], "
                f"got {images.shape}"
            )
        cfg = self.config
        p = self.params
        H, D = cfg.heads, cfg.token_dim
        dh = D // H
        n = images.shape[0]
        L = cfg.tokens_per_image

        x = self._patchify(images) @ p["patch_w"] + p["patch_b"] + p["pos"]
        maps = []
        for i in range(cfg.layers):
            h = _np_layer_norm(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
            qkv = h @ p[f"l{i}.qkv_w"] + p[f"l{i}.qkv_b"]
            q, k, v = np.split(qkv, 3, axis=-1)
            q = q.reshape(n, L, H, dh).transpose(0, 2, 1, 3)
            k = k.reshape(n, L, H, dh).transpose(0, 2, 1, 3)
            v = v.reshape(n, L, H, dh).transpose(0, 2, 1, 3)
            att = _np_softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh))
            maps.append(att)
            ctx = (att @ v).transpose(0, 2, 1, 3).reshape(n, L, D)
            x = x + ctx @ p[f"l{i}.out_w"] + p[f"l{i}.out_b"]
            h = _np_layer_norm(x, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
            x = x + _np_gelu(h @ p[f"l{i}.ffn1_w"] + p[f"l{i}.ffn1_b"]) @ p[f"l{i}.ffn2_w"] + p[f"l{i}.ffn2_b"]
        tokens = _np_layer_norm(x, p["lnf_g"], p["lnf_b"])
        layer_maps = tuple(maps)
        attention = layer_maps[-1] if self.branch == "selfsup" else None
        return VisualTokens(tokens=tokens, attention_maps=attention, layer_maps=layer_maps)


class Adapter:
    """Trainable two-layer GELU MLP from encoder tokens to the text space."""

    def __init__(self, config: EncoderConfig, branch: str, seed: int, dtype=np.float32):
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
        rng = np.random.default_rng(derive_seed(seed, "adapter", branch))
        D, d = config.token_dim, config.text_dim
        self.branch = branch
        self.w1 = Tensor((rng.standard_normal((D, D)) / np.sqrt(D)).astype(dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(D, dtype=dtype), requires_grad=True)
        self.w2 = Tensor((rng.standard_normal((D, d)) / np.sqrt(D)).astype(dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def __call__(self, raw_tokens) -> Tensor:
        x = raw_tokens if isinstance(raw_tokens, Tensor) else Tensor(raw_tokens)
        if x.shape[-1] != self.w1.shape[0]:
            raise ValueError(
                f"adapter expects token dim {self.w1.shape[0]}, got {x.shape[-1]}"
            )
        h = T.gelu(T.add(T.matmul(x, self.w1), self.b1))
        return T.add(T.matmul(h, self.w2), self.b2)


class DualEncoder:
    """Both frozen branches plus their trainable adapters."""

    def __init__(self, config: EncoderConfig, seed: int, dtype=np.float32):
        self.config = config
        self.semantic = FrozenEncoder(config, "semantic", seed, dtype)
        self.selfsup = FrozenEncoder(config, "selfsup", seed, dtype)
        self.adapter_semantic = Adapter(config, "semantic", seed, dtype)
        self.adapter_selfsup = Adapter(config, "selfsup", seed, dtype)

    def encode(self, branch: str, images: np.ndarray) -> VisualTokens:
        if branch == "semantic":
            return self.semantic.encode(images)
        if branch == "selfsup":
            return self.selfsup.encode(images)
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")

    def adapt(self, branch: str, raw_tokens) -> Tensor:
        if branch == "semantic":
            return self.adapter_semantic(raw_tokens)
        if branch == "selfsup":
            return self.adapter_selfsup(raw_tokens)
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")

    def trainable_params(self) -> dict[str, Tensor]:
        out = {}
        for name, t in self.adapter_semantic.params().items():
            out[f"adapter_semantic.{name}"] = t
        for name, t in self.adapter_selfsup.params().items():
            out[f"adapter_selfsup.{name}"] = t
        return out

    def frozen_params(self) -> dict[str, np.ndarray]:
        out = {}
        for branch, enc in (("semantic", self.semantic), ("selfsup", self.selfsup)):
            for name, arr in enc.params.items():
                out[f"encoder_{branch}.{name}"] = arr
        return out
