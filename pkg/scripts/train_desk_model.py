#!/usr/bin/env python3
"""Train the desk-scale model on the procedural corpus (cached by config hash)."""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lqdetect import checkpoint as ckio  # noqa: E402
from lqdetect import experiment as X  # noqa: E402
from lqdetect import hvae  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", help="also copy the checkpoint here")
    ap.add_argument("--cache-dir", default=".deskcache")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-images", type=int, default=2048)
    ap.add_argument("--epochs", type=int, default=X.DESK_TRAIN_PARAMS.epochs)
    ap.add_argument("--lr", type=float, default=X.DESK_TRAIN_PARAMS.lr)
    args = ap.parse_args()

    corpora = X.desk_corpora(seed=args.seed, n_train=args.train_images)
    hp = hvae.TrainParams(lr=args.lr, epochs=args.epochs,
                          batch_size=X.DESK_TRAIN_PARAMS.batch_size,
                          seed=args.seed,
                          kl_warmup_epochs=X.DESK_TRAIN_PARAMS.kl_warmup_epochs)
    t0 = time.time()
    ck = X.train_desk_model(corpora["train"], hp=hp, cache_dir=args.cache_dir,
                            on_epoch=lambda e, v: print(f"epoch {e}: mean -elbo {v:.2f}",
                                                        flush=True))
    print(f"done in {time.time() - t0:.0f}s; final mean -elbo "
          f"{ck.meta.get('final_loss')}")
    if args.out:
        ckio.save(ck, args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
