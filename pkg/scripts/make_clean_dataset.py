#!/usr/bin/env python3
"""Generate a procedural clean-image dataset with train/val/test splits."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lqdetect import dataset as D  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--train", type=int, default=2048)
    ap.add_argument("--val", type=int, default=192)
    ap.add_argument("--test", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=32)
    args = ap.parse_args()

    shape = (3, args.size, args.size)
    splits = {}
    items = []
    for name, count in (("train", args.train), ("val", args.val), ("test", args.test)):
        corpus = D.gen_clean_corpus(count, seed=args.seed, shape=shape,
                                    prefix=f"{name}")
        splits[name] = [i for i, _ in corpus]
        items.extend({"id": i, "image": img, "label": "clean", "spec": None}
                     for i, img in corpus)
    D.write_dataset(args.out, items, splits=splits,
                    meta={"seed": args.seed, "generator": "procedural"})
    print(f"wrote {len(items)} clean images to {args.out}")


if __name__ == "__main__":
    main()
