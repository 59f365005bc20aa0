"""Autoregressive decoder over the toy vocabulary, visual tokens prepended.

Two forward paths share one parameter set:

* ``forward`` builds the autodiff graph for teacher-forced training and is
  the reference semantics;
* ``generate_batch`` is a numpy-only inference path with cached keys and
  values, since re-running the full graph per emitted token would blow the
  evaluation time budget at a hundred rounds per sample.

A test pins the two paths to each other on identical inputs, so the fast
path cannot drift from the reference.

Attention projections carry no additive constants: the key-projection
constant shifts every score in a row equally and cancels in the softmax
(it could never receive gradient), and dropping the query/value ones too
keeps the projection layout uniform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .rng import derive_seed
from .tensor import Tensor

NEG_INF = -1e9


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    text_dim: int = 32
    layers: int = 2
    heads: int = 4
    max_positions: int = 288
    max_len: int = 256

    def __post_init__(self):
        if self.text_dim % self.heads != 0:
            raise ValueError("text_dim must be divisible by heads")
        if self.vocab_size < 2:
            raise ValueError("vocabulary too small")
        if self.max_len >= self.max_positions:
            raise ValueError("max_len must leave room for the visual prefix")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "text_dim": self.text_dim,
            "layers": self.layers,
            "heads": self.heads,
            "max_positions": self.max_positions,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(**d)


@dataclass
class SequenceBatch:
    """Token ids [n, N] with a mask marking the positions the loss sees."""

    token_ids: np.ndarray
    loss_mask: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.token_ids.shape != self.loss_mask.shape:
            raise ValueError("token_ids and loss_mask shapes differ")
        if self.token_ids.ndim != 2:
            raise ValueError("SequenceBatch is two-dimensional [n, N]")


def pack_sequences(token_lists, mask_lists, pad_id: int) -> SequenceBatch:
    n = len(token_lists)
    width = max(len(t) for t in token_lists)
    ids = np.full((n, width), pad_id, dtype=np.int64)
    mask = np.zeros((n, width), dtype=bool)
    for i, (toks, ms) in enumerate(zip(token_lists, mask_lists)):
        ids[i, : len(toks)] = toks
        mask[i, : len(ms)] = ms
    return SequenceBatch(ids, mask)


class Decoder:
    def __init__(self, config: DecoderConfig, seed: int, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(derive_seed(seed, "decoder"))
        d, V = config.text_dim, config.vocab_size

        def ten(arr):
            return Tensor(arr.astype(dtype), requires_grad=True)

        def init(*shape, fan_in):
            return ten(rng.standard_normal(shape) / np.sqrt(fan_in))

        p: dict[str, Tensor] = {
            "tok_emb": init(V, d, fan_in=d),
            "pos_emb": init(config.max_positions, d, fan_in=d),
        }
        for i in range(config.layers):
            p[f"l{i}.ln1_g"] = ten(np.ones(d))
            p[f"l{i}.ln1_b"] = ten(np.zeros(d))
            p[f"l{i}.qkv_w"] = init(d, 3 * d, fan_in=d)
            p[f"l{i}.out_w"] = init(d, d, fan_in=d)
            p[f"l{i}.out_b"] = ten(np.zeros(d))
            p[f"l{i}.ln2_g"] = ten(np.ones(d))
            p[f"l{i}.ln2_b"] = ten(np.zeros(d))
            p[f"l{i}.ffn1_w"] = init(d, 4 * d, fan_in=d)
            p[f"l{i}.ffn1_b"] = ten(np.zeros(4 * d))
            p[f"l{i}.ffn2_w"] = init(4 * d, d, fan_in=4 * d)
            p[f"l{i}.ffn2_b"] = ten(np.zeros(d))
        p["lnf_g"] = ten(np.ones(d))
        p["lnf_b"] = ten(np.zeros(d))
        p["head_w"] = init(d, V, fan_in=d)
        p["head_b"] = ten(np.zeros(V))
        self._params = p

    def params(self) -> dict[str, Tensor]:
        return dict(self._params)

    # ------------------------------------------------------------------
    # differentiable teacher-forced path

    def _block(self, x: Tensor, i: int, mask: np.ndarray, n: int, S: int) -> Tensor:
        p = self._params
        d = self.config.text_dim
        H = self.config.heads
        dh = d // H
        h = T.layer_norm(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
        qkv = T.matmul(h, p[f"l{i}.qkv_w"])
        q = T.narrow(qkv, 2, 0, d)
        k = T.narrow(qkv, 2, d, d)
        v = T.narrow(qkv, 2, 2 * d, d)

        def heads(t):
            return T.transpose(T.reshape(t, (n, S, H, dh)), (0, 2, 1, 3))

        q, k, v = heads(q), heads(k), heads(v)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        scores = T.add(scores, Tensor(mask))
        att = T.softmax_rows(scores)
        ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (n, S, d))
        x = T.add(x, T.add(T.matmul(ctx, p[f"l{i}.out_w"]), p[f"l{i}.out_b"]))
        h = T.layer_norm(x, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
        ffn = T.gelu(T.add(T.matmul(h, p[f"l{i}.ffn1_w"]), p[f"l{i}.ffn1_b"]))
        ffn = T.add(T.matmul(ffn, p[f"l{i}.ffn2_w"]), p[f"l{i}.ffn2_b"])
        return T.add(x, ffn)

    def forward_teacher_forced(self, visual: Tensor, seq) -> Tensor:
        """Logits [n, N, V]; position t's row predicts token t from what
        precedes it (visual prefix plus text positions < t).

        ``seq`` may be a SequenceBatch or a bare [n, N] id array; the loss
        mask plays no role in the forward pass.
        """
        token_ids = seq.token_ids if isinstance(seq, SequenceBatch) else seq
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= self.config.vocab_size:
            raise ValueError("token id outside the vocabulary")
        p = self._params
        n, N = ids.shape
        P = visual.shape[1]
        S = P + N
        if S > self.config.max_positions:
            raise ValueError(f"sequence length {S} exceeds {self.config.max_positions} positions")
        emb = T.embedding(p["tok_emb"], ids)
        x = T.concat([visual, emb], axis=1)
        pos = T.narrow(p["pos_emb"], 0, 0, S)
        x = T.add(x, T.reshape(pos, (1, S, self.config.text_dim)))
        mask = np.triu(np.full((S, S), NEG_INF, dtype=x.dtype), k=1)
        for i in range(self.config.layers):
            x = self._block(x, i, mask, n, S)
        x = T.layer_norm(x, p["lnf_g"], p["lnf_b"])
        hidden = T.narrow(x, 1, P - 1, N)
        return T.add(T.matmul(hidden, p["head_w"]), p["head_b"])

    # ------------------------------------------------------------------
    # numpy inference path with cached keys/values

    def _np(self, name: str) -> np.ndarray:
        return self._params[name].data

    def _np_block_full(self, x: np.ndarray, i: int, cache: list) -> np.ndarray:
        d = self.config.text_dim
        H = self.config.heads
        dh = d // H
        n, S, _ = x.shape
        h = _np_ln(x, self._np(f"l{i}.ln1_g"), self._np(f"l{i}.ln1_b"))
        qkv = h @ self._np(f"l{i}.qkv_w")
        q, k, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(n, S, H, dh).transpose(0, 2, 1, 3)
        k = k.reshape(n, S, H, dh).transpose(0, 2, 1, 3)
        v = v.reshape(n, S, H, dh).transpose(0, 2, 1, 3)
        cache[i]["k"][:, :, :S] = k
        cache[i]["v"][:, :, :S] = v
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
        scores += np.triu(np.full((S, S), NEG_INF, dtype=x.dtype), k=1)
        att = _np_softmax(scores)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(n, S, d)
        x = x + ctx @ self._np(f"l{i}.out_w") + self._np(f"l{i}.out_b")
        h = _np_ln(x, self._np(f"l{i}.ln2_g"), self._np(f"l{i}.ln2_b"))
        ffn = _np_gelu(h @ self._np(f"l{i}.ffn1_w") + self._np(f"l{i}.ffn1_b"))
        return x + ffn @ self._np(f"l{i}.ffn2_w") + self._np(f"l{i}.ffn2_b")

    def _np_block_step(self, x: np.ndarray, i: int, cache: list, pos: int) -> np.ndarray:
        d = self.config.text_dim
        H = self.config.heads
        dh = d // H
        n = x.shape[0]
        h = _np_ln(x, self._np(f"l{i}.ln1_g"), self._np(f"l{i}.ln1_b"))
        qkv = h @ self._np(f"l{i}.qkv_w")
        q, k, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(n, H, dh)
        cache[i]["k"][:, :, pos] = k.reshape(n, H, dh)
        cache[i]["v"][:, :, pos] = v.reshape(n, H, dh)
        keys = cache[i]["k"][:, :, : pos + 1]
        vals = cache[i]["v"][:, :, : pos + 1]
        scores = np.einsum("nhd,nhsd->nhs", q, keys) / np.sqrt(dh)
        att = _np_softmax(scores)
        ctx = np.einsum("nhs,nhsd->nhd", att, vals).reshape(n, d)
        x = x + ctx @ self._np(f"l{i}.out_w") + self._np(f"l{i}.out_b")
        h = _np_ln(x, self._np(f"l{i}.ln2_g"), self._np(f"l{i}.ln2_b"))
        ffn = _np_gelu(h @ self._np(f"l{i}.ffn1_w") + self._np(f"l{i}.ffn1_b"))
        return x + ffn @ self._np(f"l{i}.ffn2_w") + self._np(f"l{i}.ffn2_b")

    def _head(self, x: np.ndarray) -> np.ndarray:
        x = _np_ln(x, self._np("lnf_g"), self._np("lnf_b"))
        return x @ self._np("head_w") + self._np("head_b")

    def generate_batch(
        self,
        visual: np.ndarray,
        bos_id: int,
        eos_id: int,
        max_len: int | None = None,
        temperature: float = 0.0,
        seeds=None,
        collect_logits: bool = False,
        chunk: int = 256,
    ):
        """Generate one sequence per batch row; eos is consumed, not kept.

        temperature 0 is greedy argmax. Above 0, each row samples through
        its own seeded stream (``seeds[row]``), so results do not depend on
        batch composition or chunking.
        Returns (list of id lists, list of per-step logit arrays or None).
        """
        if max_len is None:
            max_len = self.config.max_len
        max_len = min(max_len, self.config.max_positions - visual.shape[1] - 1)
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        if temperature > 0 and seeds is None:
            raise ValueError("sampling needs per-row seeds")
        n = visual.shape[0]
        if seeds is not None and len(seeds) != n:
            raise ValueError("one seed per batch row")
        all_ids: list[list[int]] = []
        all_logits: list = []
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            part_seeds = None if seeds is None else list(seeds[start:stop])
            ids, logits = self._generate_chunk(
                visual[start:stop], bos_id, eos_id, max_len, temperature,
                part_seeds, collect_logits,
            )
            all_ids.extend(ids)
            all_logits.extend(logits)
        return all_ids, all_logits

    def _generate_chunk(self, visual, bos_id, eos_id, max_len, temperature, seeds, collect):
        cfg = self.config
        n, P, d = visual.shape
        total = P + 1 + max_len
        cache = [
            {
                "k": np.zeros((n, cfg.heads, total, d // cfg.heads), dtype=self.dtype),
                "v": np.zeros((n, cfg.heads, total, d // cfg.heads), dtype=self.dtype),
            }
            for _ in range(cfg.layers)
        ]
        pos_emb = self._np("pos_emb")
        tok_emb = self._np("tok_emb")
        x = visual.astype(self.dtype) + pos_emb[:P]
        prefix = x
        bos = tok_emb[bos_id] + pos_emb[P]
        x = np.concatenate([prefix, np.broadcast_to(bos, (n, 1, d)).copy()], axis=1)
        for i in range(cfg.layers):
            x = self._np_block_full(x, i, cache)
        last = x[:, -1]

        uniforms = None
        if temperature > 0:
            uniforms = np.stack(
                [np.random.default_rng(s).random(max_len) for s in seeds]
            )

        out = [[] for _ in range(n)]
        step_logits = [[] for _ in range(n)] if collect else None
        alive = np.ones(n, dtype=bool)
        for t in range(max_len):
            logits = self._head(last)
            if collect:
                for r in np.flatnonzero(alive):
                    step_logits[r].append(logits[r].copy())
            if temperature == 0.0:
                chosen = logits.argmax(axis=-1)
            else:
                z = logits / temperature
                z -= z.max(axis=-1, keepdims=True)
                probs = np.exp(z)
                probs /= probs.sum(axis=-1, keepdims=True)
                cum = probs.cumsum(axis=-1)
                u = uniforms[:, t]
                chosen = (cum < u[:, None]).sum(axis=-1)
                chosen = np.minimum(chosen, logits.shape[-1] - 1)
            for r in np.flatnonzero(alive):
                tok = int(chosen[r])
                if tok == eos_id:
                    alive[r] = False
                else:
                    out[r].append(tok)
            if not alive.any():
                break
            pos = P + 1 + t
            x_t = tok_emb[chosen] + pos_emb[pos]
            for i in range(cfg.layers):
                x_t = self._np_block_step(x_t, i, cache, pos)
            last = x_t
        if collect:
            return out, step_logits
        return out, [None] * n

    def generate(self, visual_row: np.ndarray, bos_id: int, eos_id: int,
                 max_len: int | None = None, temperature: float = 0.0,
                 seed: int | None = None, collect_logits: bool = False):
        """Single-sample convenience wrapper around generate_batch."""
        seeds = None if temperature == 0.0 else [0 if seed is None else seed]
        ids, logits = self.generate_batch(
            visual_row[None], bos_id, eos_id, max_len, temperature, seeds, collect_logits
        )
        return ids[0], logits[0]


def lm_loss(logits: Tensor, seq: SequenceBatch) -> Tensor:
    """Mean NLL of the target token at each masked position."""
    if not seq.loss_mask.any():
        raise ValueError("loss mask selects no positions")
    logp = T.log_softmax_rows(logits)
    picked = T.gather_last(logp, seq.token_ids)
    mask = seq.loss_mask.astype(logits.dtype)
    total = T.sum_all(T.mul(picked, Tensor(mask)))
    return T.scale(total, -1.0 / float(seq.loss_mask.sum()))


def _np_ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + T.LN_EPS) + b


def _np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _np_gelu(x):
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


# ---------------------------------------------------------------------------
# checkpoint format: 8-byte little-endian header length, JSON header, raw data


MAGIC = "fakelab-checkpoint"


def write_checkpoint(path, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    names = sorted(arrays)
    header = {
        "format": MAGIC,
        "version": 1,
        "tensors": [
            {"name": k, "shape": list(arrays[k].shape), "dtype": str(arrays[k].dtype)}
            for k in names
        ],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k]).tobytes())


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError("checkpoint truncated")
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("format") != MAGIC:
        raise ValueError("not a checkpoint file")
    arrays = {}
    offset = 8 + hlen
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dtype)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
        offset += nbytes
    if offset != len(raw):
        raise ValueError("checkpoint has trailing bytes")
    return arrays, header.get("extra", {})
