#!/usr/bin/env python3
"""Generate a small deterministic PPM corpus for desk-scale experiments."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from featmim.imageio import write_ppm
from featmim.synth import synthetic_image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--side", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        path = os.path.join(args.out, f"img{i:03d}.ppm")
        write_ppm(path, synthetic_image(args.side, 3, seed=args.seed + i))
    print(f"wrote {args.count} {args.side}x{args.side} images to {args.out}")


if __name__ == "__main__":
    main()
