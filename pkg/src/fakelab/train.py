"""Training loop, evaluation protocol, and paired ablation runs.

The frozen encoder branches never change, so each dataset is encoded once
up front and training steps only touch the differentiable tail. Batches
are drawn with replacement from a dedicated deterministic stream, which
makes a full run reproducible from its config alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .cot import CoTDocument, extract_verdict, parse, serialize
from .cpm import PatternNotFound, find_classification_index
from .metrics import EvalReport, build_report, consistency_analysis
from .model import LOSS_MODES, EncodedBatch, ForgeryModel, ModelConfig, Prediction
from .decoder import pack_sequences
from .rng import SplitMix64, derive_seed
from .synth import default_vocabulary
from .vocab import Vocabulary


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 3e-3
    loss_mode: str = "joint"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "loss_mode": self.loss_mode,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        return cls(model=model, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def apply_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    """Route override keys to the train or model config by field name."""
    model_fields = {f.name for f in fields(ModelConfig)}
    train_fields = {f.name for f in fields(TrainConfig)} - {"model"}
    unknown = set(overrides) - model_fields - train_fields
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    model_over = {k: v for k, v in overrides.items() if k in model_fields}
    train_over = {k: v for k, v in overrides.items() if k in train_fields}
    model = replace(config.model, **model_over) if model_over else config.model
    return replace(config, model=model, **train_over)


# ---------------------------------------------------------------------------
# dataset plumbing


def sample_images(samples) -> np.ndarray:
    return np.stack([np.asarray(s.image.grid, dtype=np.float64) for s in samples])


def answer_text(doc: CoTDocument, supervision_mode: str) -> str:
    """The target text the decoder learns under each supervision regime."""
    if supervision_mode == "full_cot":
        return serialize(doc)
    if supervision_mode == "interpretation_no_cot":
        pieces = [doc.caption]
        pieces += [step.text for step in doc.low_level + doc.high_level]
        pieces.append(doc.conclusion.text)
        return " ".join(pieces)
    if supervision_mode == "binary_answer":
        return doc.conclusion.text
    raise ValueError(f"unknown supervision mode {supervision_mode!r}")


def build_sequences(samples, vocab: Vocabulary, supervision_mode: str, pattern):
    """Token/mask lists plus fake flags; integrity problems name the sample."""
    token_lists, mask_lists, fake = [], [], []
    for s in samples:
        try:
            doc = parse(s.annotation_text)
        except Exception as e:
            raise ValueError(f"sample {s.id}: unparseable annotation: {e}") from e
        text = answer_text(doc, supervision_mode)
        ids = [vocab.bos_id] + vocab.encode_text(text) + [vocab.eos_id]
        if vocab.unk_id in ids:
            raise ValueError(f"sample {s.id}: annotation uses tokens outside the vocabulary")
        try:
            slot = find_classification_index(ids, pattern)
        except PatternNotFound as e:
            raise ValueError(f"sample {s.id}: answer pattern missing from target text") from e
        if slot >= len(ids):
            raise ValueError(f"sample {s.id}: no verdict token after the answer pattern")
        token_lists.append(ids)
        mask_lists.append([False] + [True] * (len(ids) - 1))
        fake.append(s.label == "fake")
    return token_lists, mask_lists, np.asarray(fake, dtype=bool)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: ForgeryModel
    trace: list


def train_model(samples, config: TrainConfig, vocab: Vocabulary | None = None) -> TrainResult:
    if not samples:
        raise ValueError("empty training set")
    if vocab is None:
        vocab = default_vocabulary()
    model = ForgeryModel(config.model, vocab, seed=config.seed)
    token_lists, mask_lists, fake = build_sequences(
        samples, vocab, config.model.supervision_mode, model.pattern
    )
    enc = model.encode_images(sample_images(samples))
    params = list(model.trainable_params().values())
    order = SplitMix64(derive_seed(config.seed, "batches"))
    n = len(samples)
    trace = []
    queue: list[int] = []
    for step in range(config.steps):
        while len(queue) < config.batch_size:
            epoch = list(range(n))
            order.shuffle(epoch)
            queue.extend(epoch)
        idx = queue[: config.batch_size]
        del queue[: config.batch_size]
        seq = pack_sequences(
            [token_lists[i] for i in idx], [mask_lists[i] for i in idx], vocab.pad_id
        )
        losses = model.losses(enc.take(idx), seq, fake[idx], config.loss_mode)
        T.zero_grads(params)
        losses["total"].backward()
        T.sgd_step(params, config.learning_rate)
        trace.append(
            {
                "step": step,
                "lm_loss": float(losses["lm"].data),
                "ce_loss": float(losses["ce"].data),
                "total": float(losses["total"].data),
            }
        )
    return TrainResult(model=model, trace=trace)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "lm_loss", "ce_loss", "total"])
        writer.writeheader()
        writer.writerows(trace)


# ---------------------------------------------------------------------------
# evaluation


def reasoning_text(doc: CoTDocument) -> str:
    steps = [f"Low-level: {s.attribute}: {s.text}" for s in doc.low_level]
    steps += [f"High-level: {s.attribute}: {s.text}" for s in doc.high_level]
    return " ".join(steps)


def _candidate_reasoning(pred: Prediction) -> str:
    # Parse failures still score: the raw output stands in for the
    # reasoning stage, and the n-gram metrics punish it naturally.
    try:
        return reasoning_text(parse(pred.text))
    except Exception:
        return pred.text


def evaluate_model(model: ForgeryModel, samples, temperature: float = 0.0,
                   base_seed: int = 0) -> tuple[EvalReport, list]:
    if not samples:
        raise ValueError("empty evaluation set")
    enc = model.encode_images(sample_images(samples))
    preds = model.predict(enc, temperature=temperature, base_seed=base_seed)
    labels = [s.label for s in samples]
    pairs = []
    for s, p in zip(samples, preds):
        reference = reasoning_text(parse(s.annotation_text))
        pairs.append((_candidate_reasoning(p), reference))
    report = build_report(
        verdicts=[p.text_verdict for p in preds],
        labels=labels,
        subsets=labels,
        reasoning_pairs=pairs,
        head_verdicts=[p.head_verdict for p in preds],
    )
    return report, preds


def model_round_runner(model: ForgeryModel, base_seed: int = 0, chunk: int = 256):
    """Adapter for consistency_analysis: repeated seeded decoding rounds.

    All rounds share one visual prefix computation and go through the
    decoder as a single batched call; row seeds depend on (round, sample)
    only, so the outcome is independent of chunking.
    """

    def run(samples, rounds: int, temperature: float):
        enc = model.encode_images(sample_images(samples))
        pre = model.prefix_array(enc)
        n = enc.count
        tiled = np.tile(pre, (rounds, 1, 1))
        seeds = None
        if temperature > 0:
            seeds = [
                derive_seed(base_seed, "round", b, i)
                for b in range(rounds)
                for i in range(n)
            ]
        ids, _ = model.decoder.generate_batch(
            tiled,
            model.vocab.bos_id,
            model.vocab.eos_id,
            max_len=model.config.max_len,
            temperature=temperature,
            seeds=seeds,
            chunk=chunk,
        )
        verdicts = [[None] * rounds for _ in range(n)]
        for b in range(rounds):
            for i in range(n):
                text = model.vocab.decode_text(ids[b * n + i])
                verdicts[i][b] = extract_verdict(text)
        return verdicts

    return run


def model_inconsistency(model: ForgeryModel, samples, rounds: int,
                        temperature: float, base_seed: int = 0) -> float:
    return consistency_analysis(
        model_round_runner(model, base_seed), samples, rounds, temperature
    )


# ---------------------------------------------------------------------------
# paired comparisons


def run_paired(base: TrainConfig, arms: dict, seeds, make_data,
               vocab: Vocabulary | None = None) -> dict:
    """Train every arm on identical per-seed data; {arm: {seed: report}}.

    ``arms`` maps a name to config overrides; ``make_data(seed)`` returns
    (train_samples, eval_samples) shared by all arms at that seed.
    """
    results: dict = {arm: {} for arm in arms}
    for seed in seeds:
        train_samples, eval_samples = make_data(seed)
        for arm, overrides in arms.items():
            cfg = apply_overrides(base, dict(overrides, seed=seed))
            trained = train_model(train_samples, cfg, vocab=vocab)
            report, _ = evaluate_model(trained.model, eval_samples)
            results[arm][seed] = report
    return results
