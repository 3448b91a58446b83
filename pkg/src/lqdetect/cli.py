"""Command-line workflow: train / corrupt / score / evaluate / visualize / serve.

Exit codes: 0 success, 2 usage or validation error, 1 internal error.
Every command is reproducible: identical inputs and seed give byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import checkpoint as ckio
from . import corruptions, dataset, evaluation, hvae, scoring, visualize
from .util import atomic_write_bytes, atomic_write_text, make_rng


class UsageError(ValueError):
    pass


DEFAULT_MODEL_CONFIG = hvae.HvaeConfig(
    image_shape=(3, 32, 32),
    layers=(hvae.LayerSpec(4, 16), hvae.LayerSpec(8, 8), hvae.LayerSpec(8, 8),
            hvae.LayerSpec(12, 4), hvae.LayerSpec(16, 2), hvae.LayerSpec(24, 1)),
    hidden_channels=32,
)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed JSON in {path}: {e}")


def _load_score_config(path) -> scoring.ScoreConfig:
    if path is None:
        raise UsageError("--config with a score config JSON is required")
    try:
        return scoring.ScoreConfig.from_dict(_load_json(path))
    except (KeyError, scoring.ScoringError) as e:
        raise UsageError(f"bad score config {path}: {e}")


def _dataset_images(layout, split=None):
    ids = layout.split(split) if split else layout.ids()
    if split and not ids:
        raise UsageError(f"dataset has no {split!r} split")
    return [(i, layout.image(i)) for i in sorted(ids)]


# ------------------------------------------------------------------
# commands
# ------------------------------------------------------------------

def cmd_train(args) -> int:
    layout = dataset.load_dataset(args.data)
    train_ids = layout.split("train") or layout.ids()
    labels = layout.labels()
    bad = [i for i in train_ids if labels[i] != "clean"]
    if bad:
        raise UsageError(f"train split contains corrupted-labeled images: {bad[:5]}")
    config = (hvae.HvaeConfig.from_dict(_load_json(args.config))
              if args.config else DEFAULT_MODEL_CONFIG)
    images = np.stack([layout.image(i) for i in sorted(train_ids)])
    hp = hvae.TrainParams(lr=args.lr, epochs=args.epochs, batch_size=args.batch,
                          seed=args.seed, kl_warmup_epochs=args.kl_warmup)
    ck = hvae.train(images, config, hp,
                    on_epoch=lambda e, v: print(f"epoch {e}: mean -elbo {v:.4f}"))
    ckio.save(ck, args.out)
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_corrupt(args) -> int:
    layout = dataset.load_dataset(args.data)
    if args.kinds.strip() == "all":
        kinds = list(corruptions.KINDS)
    else:
        kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for k in kinds:
        if k not in corruptions.KINDS:
            raise UsageError(f"unknown corruption kind {k!r}; supported: "
                             f"{', '.join(corruptions.KINDS)}")
    source = _dataset_images(layout, args.split)
    if args.count:
        source = source[:args.count]
    items = corruptions.build_benchmark(source, kinds, args.severity, args.seed)
    dataset.write_dataset(args.out, items,
                          meta={"seed": args.seed, "severity": args.severity,
                                "kinds": kinds, "source": os.fspath(args.data)})
    print(f"wrote benchmark dataset {args.out} ({len(items)} images)")
    return 0


def _score_rows(checkpoint, layout, method, cfg, llr_k=None):
    labels = layout.labels()
    rows = []
    for image_id in sorted(layout.ids()):
        img = layout.image(image_id)
        value, k_used, m = scoring.score_with_method(checkpoint, img, method, cfg,
                                                     image_id=image_id, llr_k=llr_k)
        rows.append({"image_id": image_id, "method": method, "score": repr(value),
                     "k_used": k_used, "M": repr(m), "label": labels[image_id]})
    return rows


def write_scores_csv(rows) -> bytes:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["image_id", "method", "score",
                                             "k_used", "M", "label"])
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue().encode("utf-8")


def cmd_score(args) -> int:
    checkpoint = ckio.load(args.checkpoint)
    layout = dataset.load_dataset(args.data)
    if args.method not in scoring.METHODS:
        raise UsageError(f"unknown method {args.method!r}; supported: "
                         f"{', '.join(scoring.METHODS)}")
    cfg = _load_score_config(args.config)
    first = layout.image(sorted(layout.ids())[0])
    if first.shape != tuple(checkpoint.config.image_shape):
        raise UsageError(f"dataset images {first.shape} do not match checkpoint "
                         f"{tuple(checkpoint.config.image_shape)}")
    rows = _score_rows(checkpoint, layout, args.method, cfg, llr_k=args.llr_k)
    atomic_write_bytes(args.out, write_scores_csv(rows))
    print(f"wrote {len(rows)} scores to {args.out}")
    return 0


def read_scores_csv(path, kind_by_id=None):
    out = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(evaluation.LabeledScore(
                    image_id=row["image_id"],
                    score=float(row["score"]),
                    label=row["label"],
                    method=row["method"],
                    kind=(kind_by_id or {}).get(row["image_id"]),
                ))
            except (KeyError, TypeError, ValueError, evaluation.MetricError) as e:
                raise UsageError(f"{path}:{lineno}: malformed score row ({e})")
    return out


def cmd_evaluate(args) -> int:
    csv_paths = [p.strip() for p in args.scores.split(",") if p.strip()]
    if not csv_paths:
        raise UsageError("no scores CSVs given")
    data_dirs = ([p.strip() for p in args.data.split(",")] if args.data else [])
    if data_dirs and len(data_dirs) not in (1, len(csv_paths)):
        raise UsageError("--data must name one dataset or one per scores CSV")
    scores = []
    for i, path in enumerate(csv_paths):
        kind_by_id = None
        if data_dirs:
            ddir = data_dirs[0] if len(data_dirs) == 1 else data_dirs[i]
            layout = dataset.load_dataset(ddir)
            kind_by_id = {r["id"]: (r["corruption"] or {}).get("kind")
                          for r in layout.records}
        scores.extend(read_scores_csv(path, kind_by_id))
    methods = sorted({s.method for s in scores})
    for m in methods:
        mine = [s for s in scores if s.method == m]
        if not any(s.label == "clean" for s in mine) or \
           not any(s.label == "corrupted" for s in mine):
            raise UsageError(f"method {m!r} lacks both classes; "
                             "scores do not overlap a labeled benchmark")
    report = evaluation.summarize_scores(scores)
    atomic_write_text(args.out, json.dumps(report.to_dict(), sort_keys=True,
                                           indent=1) + "\n")
    table = report.text_table()
    if args.table:
        atomic_write_text(args.table, table)
    print(table)
    return 0


def cmd_visualize(args) -> int:
    checkpoint = ckio.load(args.checkpoint)
    layout = dataset.load_dataset(args.data)
    L = checkpoint.config.num_layers
    ks = [int(k) for k in args.ks.split(",") if k.strip() != ""]
    for k in ks:
        if not 0 <= k <= L - 1:
            raise UsageError(f"k={k} out of range [0, {L - 1}]")
    ids = ([i.strip() for i in args.ids.split(",")] if args.ids
           else sorted(layout.ids())[:args.limit])
    os.makedirs(args.out, exist_ok=True)
    for image_id in ids:
        strip = visualize.recon_strip(checkpoint, layout.image(image_id), ks,
                                      seed=args.seed)
        dataset.save_png(os.path.join(args.out, f"{image_id}_strip.png"), strip)
    # corruption gallery off the first image: [corrupted | its partial recon]
    base_id = ids[0]
    base = layout.image(base_id)
    pairs = []
    for kind in corruptions.KINDS:
        spec = corruptions.CorruptionSpec(kind, args.severity,
                                          seed=make_rng(args.seed, kind).integers(2**31))
        corrupted = corruptions.apply(base, spec)
        k = ks[-1] if ks else L - 1
        state = hvae.partial_reconstruct(checkpoint, corrupted, k,
                                         make_rng(args.seed, kind, "recon"))
        pairs.append((corrupted, state.mean))
    dataset.save_png(os.path.join(args.out, "gallery.png"), visualize.pair_grid(pairs))
    print(f"wrote {len(ids)} strips and gallery.png to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from . import service
    cfg = _load_score_config(args.config)
    app = service.build_app(args.checkpoint, args.data, cfg, args.manifest)
    import uvicorn
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except OSError as e:
        raise UsageError(f"cannot bind port {args.port}: {e}")
    return 0


# ------------------------------------------------------------------
# argument wiring
# ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lqdetect",
                                description="low-quality image detection workflow")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the hierarchical VAE on clean images")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="model config JSON")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=2e-3)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--kl-warmup", type=int, default=5)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    c = sub.add_parser("corrupt", help="build a 50/50 clean/corrupted benchmark")
    c.add_argument("--data", required=True)
    c.add_argument("--kinds", required=True,
                   help="comma-separated kinds, or 'all'")
    c.add_argument("--severity", type=int, default=1)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--split", help="restrict sources to this split")
    c.add_argument("--count", type=int, help="cap the number of source images")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_corrupt)

    s = sub.add_parser("score", help="score a dataset with one method")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--method", required=True)
    s.add_argument("--config", required=True, help="score config JSON")
    s.add_argument("--llr-k", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_score)

    e = sub.add_parser("evaluate", help="summarize scores CSVs into a report")
    e.add_argument("--scores", required=True, help="comma-separated CSV paths")
    e.add_argument("--data", help="dataset dir(s) for corruption-kind lookup")
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--table", help="also write the aligned text table here")
    e.set_defaults(fn=cmd_evaluate)

    v = sub.add_parser("visualize", help="write reconstruction strips and gallery")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--ids", help="comma-separated image ids")
    v.add_argument("--limit", type=int, default=4)
    v.add_argument("--ks", default="", help="comma-separated split layers")
    v.add_argument("--severity", type=int, default=1)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_visualize)

    r = sub.add_parser("serve", help="run the review HTTP service")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--config", required=True, help="score config JSON")
    r.add_argument("--manifest", required=True, help="review manifest path")
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=8000)
    r.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, dataset.DatasetError, corruptions.CorruptionError,
            scoring.ScoringError, hvae.HvaeError, ckio.CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal error
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
