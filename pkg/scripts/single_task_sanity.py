"""Single-task detection AUC on one synthetic scene per seed."""

import argparse
import time

import torch

from clhad.experiments import single_task_auc
from clhad.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--batch-size", type=int, default=256)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--bands", type=int, default=64)
    args = ap.parse_args()
    torch.set_num_threads(1)
    for seed in args.seeds:
        t0 = time.time()
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size)
        auc = single_task_auc(seed, cfg, size=args.size, bands=args.bands)
        print(f"seed {seed}: auc_df {auc:.4f} ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
