"""Desk-scale end-to-end experiment: corpus, training, calibration, benchmarks.

Everything is seed-deterministic and cached by content hash, so the
expensive steps (training, scoring) run once per configuration.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import checkpoint as ckio
from . import corruptions, evaluation, hvae, scoring
from .dataset import gen_clean_corpus
from .util import atomic_write_text, canonical_json, make_rng, sha256_bytes

DESK_KINDS = tuple(corruptions.KINDS)

DESK_MODEL_CONFIG = hvae.HvaeConfig(
    image_shape=(3, 32, 32),
    layers=(hvae.LayerSpec(4, 16), hvae.LayerSpec(8, 8), hvae.LayerSpec(8, 8),
            hvae.LayerSpec(12, 4), hvae.LayerSpec(16, 2), hvae.LayerSpec(24, 1)),
    hidden_channels=32,
)

DESK_TRAIN_PARAMS = hvae.TrainParams(lr=2e-3, epochs=24, batch_size=32, seed=0,
                                     kl_warmup_epochs=5)


def _hash_obj(obj) -> str:
    return sha256_bytes(canonical_json(obj).encode())


def desk_corpora(seed: int = 0, n_train: int = 2048, n_val: int = 192,
                 n_test: int = 128, shape=(3, 32, 32)) -> dict:
    """Disjoint clean corpora for training, calibration, and testing."""
    return {
        "train": gen_clean_corpus(n_train, make_seed(seed, "train"), shape, "train"),
        "val": gen_clean_corpus(n_val, make_seed(seed, "val"), shape, "val"),
        "test": gen_clean_corpus(n_test, make_seed(seed, "test"), shape, "test"),
    }


def make_seed(seed: int, tag: str) -> int:
    return int(make_rng(seed, tag).integers(2**31))


def train_desk_model(corpus, config=DESK_MODEL_CONFIG, hp=DESK_TRAIN_PARAMS,
                     cache_dir=None, on_epoch=None) -> hvae.HvaeCheckpoint:
    """Train (or load from cache) the desk model on a clean corpus."""
    images = np.stack([img for _, img in corpus])
    key = _hash_obj({
        "config": config.to_dict(),
        "hp": {"lr": hp.lr, "epochs": hp.epochs, "batch": hp.batch_size,
               "seed": hp.seed, "warmup": hp.kl_warmup_epochs,
               "clip": hp.grad_clip},
        "data": sha256_bytes(images.tobytes()),
    })[:16]
    cache_path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        cache_path = os.path.join(cache_dir, f"desk-{key}.hvae")
        if os.path.exists(cache_path):
            return ckio.load(cache_path)
    ck = hvae.train(images, config, hp, on_epoch=on_epoch)
    ck.meta["cache_key"] = key
    if cache_path:
        ckio.save(ck, cache_path)
    return ck


def build_kind_benchmarks(clean_test, kinds, severity: int = 1, seed: int = 0):
    """One 50/50 benchmark per kind plus the pooled mixed benchmark."""
    out = {kind: corruptions.build_benchmark(clean_test, [kind], severity,
                                             make_seed(seed, kind))
           for kind in kinds}
    out["__pooled__"] = corruptions.build_benchmark(
        clean_test, list(kinds), severity, make_seed(seed, "pooled"))
    return out


def calibrate_on_validation(checkpoint, clean_val, kinds, severity: int = 1,
                            seed: int = 0, n_samples: int = 1,
                            cache_dir=None) -> scoring.ScoreConfig:
    """Grid-search the adaptive-k config on a validation benchmark."""
    key = None
    if cache_dir:
        key = _hash_obj({"ck": checkpoint.meta.get("cache_key", ""),
                         "seed": seed, "severity": severity,
                         "kinds": list(kinds), "n": n_samples,
                         "nval": len(clean_val)})[:16]
        path = os.path.join(cache_dir, f"scorecfg-{key}.json")
        if os.path.exists(path):
            with open(path) as f:
                return scoring.ScoreConfig.from_dict(json.load(f))
    items = corruptions.build_benchmark(clean_val, list(kinds), severity,
                                        make_seed(seed, "calibration"))
    cfg = scoring.calibrate(checkpoint, items, n_samples=n_samples, seed=seed)
    if cache_dir and key:
        atomic_write_text(os.path.join(cache_dir, f"scorecfg-{key}.json"),
                          canonical_json(cfg.to_dict()))
    return cfg


def score_benchmarks(checkpoint, benchmarks: dict, methods, cfg,
                     cache_dir=None, llr_k=None) -> list:
    """LabeledScores for every (method, benchmark item); cached as JSON."""
    key = None
    if cache_dir:
        key = _hash_obj({"ck": checkpoint.meta.get("cache_key", ""),
                         "cfg": cfg.to_dict(), "methods": list(methods),
                         "names": sorted(benchmarks), "llr_k": llr_k,
                         "counts": {k: len(v) for k, v in benchmarks.items()}})[:16]
        path = os.path.join(cache_dir, f"scores-{key}.json")
        if os.path.exists(path):
            with open(path) as f:
                return [evaluation.LabeledScore(**row) for row in json.load(f)]
    scores = []
    for bench_name, items in sorted(benchmarks.items()):
        for method in methods:
            for it in items:
                value, _, _ = scoring.score_with_method(
                    checkpoint, it.image, method, cfg,
                    image_id=f"{bench_name}/{it.image_id}", llr_k=llr_k)
                scores.append(evaluation.LabeledScore(
                    image_id=f"{bench_name}/{it.image_id}", score=value,
                    label=it.label, method=method,
                    kind=it.spec.kind if it.spec is not None else None))
    if cache_dir and key:
        rows = [{"image_id": s.image_id, "score": s.score, "label": s.label,
                 "method": s.method, "kind": s.kind} for s in scores]
        atomic_write_text(os.path.join(cache_dir, f"scores-{key}.json"),
                          json.dumps(rows))
    return scores


def kind_auroc_table(scores, methods, kinds) -> dict:
    """AUROC per (method, kind) over the per-kind benchmarks, plus averages.

    A per-kind benchmark's scores are identified by the image-id prefix, so
    each cell is that benchmark's own 50/50 split.
    """
    table = {}
    for method in methods:
        mine = [s for s in scores if s.method == method]
        per_kind = {}
        for kind in kinds:
            subset = [s for s in mine if s.image_id.startswith(f"{kind}/")]
            per_kind[kind] = evaluation.auroc(subset)
        table[method] = per_kind
        table[method]["average"] = float(np.mean([per_kind[k] for k in kinds]))
    return table


def pooled_auroc(scores, method) -> float:
    subset = [s for s in scores if s.method == method
              and s.image_id.startswith("__pooled__/")]
    return evaluation.auroc(subset)
