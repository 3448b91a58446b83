#!/usr/bin/env python3
"""Build a small mixed benchmark plus score config, ready for `lqdetect serve`."""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lqdetect import checkpoint as ckio  # noqa: E402
from lqdetect import corruptions, dataset, experiment as X  # noqa: E402
from lqdetect import hvae  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="demo directory")
    ap.add_argument("--cache-dir", default=".deskcache")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--images", type=int, default=50)
    ap.add_argument("--train-images", type=int, default=2048)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpora = X.desk_corpora(seed=args.seed, n_train=args.train_images,
                             n_test=args.images)
    ck = X.train_desk_model(corpora["train"], cache_dir=args.cache_dir,
                            on_epoch=lambda e, v: print(f"epoch {e}: {v:.2f}",
                                                        flush=True))
    cfg = X.calibrate_on_validation(ck, corpora["val"], X.DESK_KINDS,
                                    seed=args.seed, cache_dir=args.cache_dir)
    items = corruptions.build_benchmark(corpora["test"], list(X.DESK_KINDS), 1,
                                        X.make_seed(args.seed, "demo"))
    dataset.write_dataset(out / "data", items, meta={"purpose": "review demo"})
    ckio.save(ck, out / "model.hvae")
    (out / "score.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    print("demo ready; run:")
    print(f"  lqdetect serve --checkpoint {out/'model.hvae'} --data {out/'data'} "
          f"--config {out/'score.json'} --manifest {out/'review.json'} --port 8000")


if __name__ == "__main__":
    main()
