"""Parameter counts of the generator (kept for detection) and both networks (training)."""

import argparse

from clhad.model import ModelState


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bands", type=int, nargs="+", default=[64, 128, 189, 205])
    ap.add_argument("--channels-per-scale", type=int, default=None)
    ap.add_argument("--patch", type=int, default=None)
    args = ap.parse_args()
    overrides = {k: v for k, v in [("channels_per_scale", args.channels_per_scale),
                                   ("patch", args.patch)] if v is not None}
    print(f"{'bands':>6} {'generator':>10} {'discriminator':>14} {'training':>10}")
    for c in args.bands:
        counts = ModelState.create(c, **overrides).param_counts()
        g, d = counts["generator"], counts["discriminator"]
        print(f"{c:>6} {g:>10,} {d:>14,} {g + d:>10,}")


if __name__ == "__main__":
    main()
