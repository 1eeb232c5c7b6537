"""Share of true background pixels kept by neighbourhood-similarity selection, per threshold."""

import argparse

from clhad.bsm import select_background
from clhad.hsi_io import SceneSpec, synth_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--mu", type=float, nargs="+", default=[0.95, 0.98, 0.99, 0.995])
    ap.add_argument("--window", type=int, default=3)
    args = ap.parse_args()
    print("seed " + " ".join(f"mu={m:<6}" for m in args.mu))
    for seed in args.seeds:
        cube, mask = synth_scene(SceneSpec(seed=seed))
        truth = mask.labels.ravel() == 0
        cells = []
        for mu in args.mu:
            s, _ = select_background(cube, mu, args.window)
            cells.append(f"{(s[truth] == 0).mean():<9.4f}")
        print(f"{seed:<4} " + " ".join(cells))


if __name__ == "__main__":
    main()
