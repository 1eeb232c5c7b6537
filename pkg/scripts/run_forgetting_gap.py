"""Continual vs fine-tune on seeded 3-task synthetic streams; one JSON line per seed.

    python3 scripts/run_forgetting_gap.py --seeds 0 1 2 --epochs 200 --batch-size 256
"""

import argparse
import json
import logging

import numpy as np
import torch

from clhad.experiments import forgetting_gap, synthetic_stream
from clhad.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--tasks", type=int, default=3)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--bands", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--batch-size", type=int, default=256)
    ap.add_argument("--config", help="JSON TrainConfig overrides")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    torch.set_num_threads(1)

    base = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    gaps = []
    for seed in args.seeds:
        cfg = TrainConfig.from_dict({**base.to_dict(), "epochs": args.epochs,
                                     "batch_size": args.batch_size, "seed": seed})
        stream = synthetic_stream(args.tasks, seed, size=args.size, bands=args.bands)
        result = forgetting_gap(stream, cfg)
        gaps.append((result.bwt_gap, result.acc_gap))
        print(json.dumps(result.as_dict()), flush=True)
    bwt, acc = np.array(gaps).T
    print(json.dumps({"mean_bwt_gap": float(bwt.mean()), "mean_acc_gap": float(acc.mean()),
                      "min_bwt_gap": float(bwt.min()), "min_acc_gap": float(acc.min())}))


if __name__ == "__main__":
    main()
