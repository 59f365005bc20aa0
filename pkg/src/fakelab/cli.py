"""Command-line entry point.

Exit codes: 0 success, 1 domain failure (bad data, failed check), 2 usage.
Every command is reproducible from its flags; data files never contain
timestamps or machine state.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checks import gradient_suite
from .metrics import consistency_analysis
from .model import ForgeryModel
from .synth import (
    dataset_stats,
    generate_dataset,
    read_dataset,
    validate_dataset,
    write_dataset,
)
from .train import (
    TrainConfig,
    evaluate_model,
    model_round_runner,
    run_paired,
    train_model,
    write_trace,
)

GRAD_TOLERANCE = 1e-4


def _cmd_synth(args) -> int:
    samples = generate_dataset(
        seed=args.seed, n_real=args.real, n_fake=args.fake, difficulty=args.difficulty
    )
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    samples = read_dataset(args.dataset)
    problems = validate_dataset(samples)
    for line in problems:
        print(line)
    print(f"{len(samples)} samples, {len(problems)} problems")
    return 1 if problems else 0


def _cmd_stats(args) -> int:
    stats = dataset_stats(read_dataset(args.dataset))
    print(f"samples: {stats.total}")
    for label in sorted(stats.label_counts):
        print(f"  {label}: {stats.label_counts[label]}")
    print("attribute histogram:")
    for label in sorted(stats.attribute_hist):
        for attr, count in sorted(stats.attribute_hist[label].items()):
            print(f"  {label:5s} {attr:20s} {count}")
    def hist_line(name, hist):
        span = f"{min(hist)}..{max(hist)}" if hist else "-"
        print(f"{name}: lengths {span}, {sum(hist.values())} texts")
    hist_line("caption tokens", stats.caption_length_hist)
    hist_line("reasoning tokens", stats.reasoning_length_hist)
    return 0


def _load_train_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = TrainConfig()
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_train(args) -> int:
    config = _load_train_config(args)
    samples = read_dataset(args.dataset)
    result = train_model(samples, config)
    out = Path(args.out)
    result.model.save(out)
    trace_path = out.with_suffix(".trace.csv")
    write_trace(trace_path, result.trace)
    last = result.trace[-1]
    print(f"trained {config.steps} steps; final total loss {last['total']:.4f}")
    print(f"checkpoint: {out}")
    print(f"loss trace: {trace_path}")
    return 0


def _cmd_eval(args) -> int:
    model = ForgeryModel.load(args.checkpoint)
    samples = read_dataset(args.dataset)
    report, _ = evaluate_model(
        model, samples, temperature=args.temperature, base_seed=args.seed or 0
    )
    print(report.table())
    if args.rounds:
        inco = consistency_analysis(
            model_round_runner(model, base_seed=args.seed or 0),
            samples, args.rounds, args.temperature,
        )
        print(f"inconsistency %     {inco:8.2f}")
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        print(f"report: {args.out}")
    return 0


def _cmd_infer(args) -> int:
    model = ForgeryModel.load(args.checkpoint)
    samples = read_dataset(args.dataset)
    chosen = [s for s in samples if s.id == args.id] if args.id else samples[:1]
    if not chosen:
        raise ValueError(f"sample id {args.id!r} not in {args.dataset}")
    sample = chosen[0]
    enc = model.encode_images(np.asarray(sample.image.grid, dtype=np.float64)[None])
    pred = model.predict(enc, temperature=args.temperature, base_seed=args.seed or 0)[0]
    print(f"sample: {sample.id} (label {sample.label})")
    print(pred.text)
    p = "n/a" if pred.p_fake is None else f"{pred.p_fake:.4f}"
    print(f"p_fake: {p}")
    print(f"text verdict: {pred.text_verdict}")
    print(f"head verdict: {pred.head_verdict}")
    return 0


def _cmd_ablate(args) -> int:
    base = _load_train_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if not seeds:
        raise ValueError("need at least one seed")
    arms = {
        "joint": {},
        "lm_only": {"loss_mode": "lm_only"},
        "cross_attention": {"fusion_mode": "cross_attention"},
        "binary_answer": {"supervision_mode": "binary_answer"},
    }

    def make_data(seed):
        train = generate_dataset(seed=seed, n_real=args.real, n_fake=args.fake,
                                 difficulty=args.difficulty)
        eval_ = generate_dataset(seed=seed + 1000, n_real=args.real // 2,
                                 n_fake=args.fake // 2, difficulty=args.difficulty)
        return train, eval_

    results = run_paired(base, arms, seeds, make_data)
    summary = {
        arm: {
            "mean_accuracy": float(np.mean(
                [r.average_accuracy_percent for r in by_seed.values()]
            )),
            "mean_bleu1": float(np.mean([r.bleu1 for r in by_seed.values()])),
            "per_seed": {str(s): r.to_dict() for s, r in by_seed.items()},
        }
        for arm, by_seed in results.items()
    }
    for arm, row in summary.items():
        print(f"{arm:18s} acc {row['mean_accuracy']:6.2f}  bleu1 {row['mean_bleu1']:.4f}")
    if args.out:
        Path(args.out).write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"results: {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    worst = 0.0
    for name, err in gradient_suite().items():
        flag = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        print(f"{name:35s} {err:.3e}  {flag}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    return 0 if worst <= GRAD_TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fakelab",
        description="Synthetic forgery detection and reasoning workbench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a dataset file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--real", type=int, required=True)
    p.add_argument("--fake", type=int, required=True)
    p.add_argument("--difficulty", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("validate", help="check every annotation in a dataset")
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("stats", help="label/attribute/length statistics")
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--rounds", type=int, help="also run consistency rounds")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("infer", help="run one sample and print the full output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--id", help="sample id (default: first sample)")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("ablate", help="paired runs across the standard arms")
    p.add_argument("--config", help="base TrainConfig JSON file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated run seeds")
    p.add_argument("--real", type=int, default=200)
    p.add_argument("--fake", type=int, default=200)
    p.add_argument("--difficulty", type=float, default=0.3)
    p.add_argument("--out", help="write the summary as JSON")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.set_defaults(fn=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
