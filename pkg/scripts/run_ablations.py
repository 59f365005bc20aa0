"""Paired ablations over loss mode, fusion mode, and supervision format.

Each seed draws one dataset shared by every arm, so arm differences are
not confounded by data draws. Prints per-arm means over seeds.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from fakelab.synth import generate_dataset
from fakelab.train import TrainConfig, run_paired

ARMS = {
    "joint": {},
    "lm_only": {"loss_mode": "lm_only"},
    "ce_only": {"loss_mode": "ce_only"},
    "cross_attention": {"fusion_mode": "cross_attention"},
    "interleave": {"fusion_mode": "interleave"},
    "clip_only": {"fusion_mode": "clip_only"},
    "interpretation_no_cot": {"supervision_mode": "interpretation_no_cot"},
    "binary_answer": {"supervision_mode": "binary_answer"},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--arms", default=",".join(ARMS),
                    help="comma-separated subset of: " + ", ".join(ARMS))
    ap.add_argument("--train-size", type=int, default=300, help="per class")
    ap.add_argument("--eval-size", type=int, default=100, help="per class")
    ap.add_argument("--difficulty", type=float, default=0.3)
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--learning-rate", type=float, default=0.1)
    ap.add_argument("--out", type=Path, default=Path("runs/ablations.json"))
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    arms = {name: ARMS[name] for name in args.arms.split(",")}
    base = TrainConfig(steps=args.steps, batch_size=8, learning_rate=args.learning_rate)

    def make_data(seed):
        train = generate_dataset(seed=seed, n_real=args.train_size,
                                 n_fake=args.train_size, difficulty=args.difficulty)
        eval_ = generate_dataset(seed=seed + 1000, n_real=args.eval_size,
                                 n_fake=args.eval_size, difficulty=args.difficulty)
        return train, eval_

    results = run_paired(base, arms, seeds, make_data)

    print(f"{'arm':22s} {'acc':>7s} {'fail':>6s} {'bleu1':>7s} {'rougeL':>7s} {'css':>7s}")
    summary = {}
    for arm, by_seed in results.items():
        reports = list(by_seed.values())
        row = {
            "accuracy": float(np.mean([r.average_accuracy_percent for r in reports])),
            "fail": float(np.mean([r.fail_rate_percent for r in reports])),
            "bleu1": float(np.mean([r.bleu1 for r in reports])),
            "rouge_l": float(np.mean([r.rouge_l for r in reports])),
            "css": float(np.mean([r.css for r in reports])),
            "per_seed": {str(s): r.to_dict() for s, r in by_seed.items()},
        }
        summary[arm] = row
        print(f"{arm:22s} {row['accuracy']:7.2f} {row['fail']:6.2f} "
              f"{row['bleu1']:7.3f} {row['rouge_l']:7.3f} {row['css']:7.3f}")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
