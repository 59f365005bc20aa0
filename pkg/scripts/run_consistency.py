"""Repeated-decoding consistency: how often do sampled verdicts disagree?

Loads a trained checkpoint, decodes each sample for several rounds at a
range of temperatures, and reports the mean minority-verdict share.
"""

import argparse
from pathlib import Path

from fakelab.model import ForgeryModel
from fakelab.synth import generate_dataset
from fakelab.train import model_inconsistency


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", type=Path, required=True)
    ap.add_argument("--eval-seed", type=int, default=8)
    ap.add_argument("--samples", type=int, default=50, help="per class")
    ap.add_argument("--difficulty", type=float, default=0.3)
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--temperatures", default="0.0,0.1,0.2,0.4,0.8")
    ap.add_argument("--base-seed", type=int, default=0)
    args = ap.parse_args()

    model = ForgeryModel.load(args.checkpoint)
    data = generate_dataset(seed=args.eval_seed, n_real=args.samples,
                            n_fake=args.samples, difficulty=args.difficulty)

    print(f"{args.rounds} rounds on {len(data)} samples")
    print(f"{'temperature':>12s} {'inconsistency %':>16s}")
    for raw in args.temperatures.split(","):
        temp = float(raw)
        value = model_inconsistency(model, data, rounds=args.rounds,
                                    temperature=temp, base_seed=args.base_seed)
        print(f"{temp:12.2f} {value:16.2f}")


if __name__ == "__main__":
    main()
