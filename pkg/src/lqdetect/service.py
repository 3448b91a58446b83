"""Review HTTP service: scored gallery, accept/reject decisions, persistence.

Decisions are serialized through a single writer lock and the manifest is
rewritten write-ahead-then-rename on every change, so a crash can never
leave a truncated file. Scores live in an on-disk cache keyed by
(checkpoint hash, score-config hash), making restarts cheap.
"""

from __future__ import annotations

import json
import os
import threading
import time
from typing import Optional

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from . import checkpoint as ckio
from . import dataset as ds
from . import hvae, scoring
from .util import atomic_write_text, canonical_json, make_rng, sha256_bytes, sha256_file

MANIFEST_VERSION = 1


class ServiceError(RuntimeError):
    pass


class DecisionBody(BaseModel):
    decision: str
    note: Optional[str] = None


class ThresholdBody(BaseModel):
    threshold: float


def _config_hash(cfg: scoring.ScoreConfig) -> str:
    return sha256_bytes(canonical_json(cfg.to_dict()).encode())


class ReviewStore:
    """Review session state + crash-safe persistence."""

    def __init__(self, manifest_path, checkpoint_hash, config, records,
                 threshold=0.0):
        self.manifest_path = os.fspath(manifest_path)
        self.checkpoint_hash = checkpoint_hash
        self.config = config
        self.records = sorted(records, key=lambda r: -r["score"])
        self.threshold = threshold
        self._lock = threading.Lock()
        self._by_id = {r["image_id"]: r for r in self.records}

    # -------------------------------------------------- persistence

    def to_manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "checkpoint_sha256": self.checkpoint_hash,
            "score_config": self.config.to_dict(),
            "score_config_sha256": _config_hash(self.config),
            "threshold": self.threshold,
            "records": self.records,
        }

    def persist(self) -> None:
        atomic_write_text(self.manifest_path,
                          json.dumps(self.to_manifest(), sort_keys=True, indent=1) + "\n")

    @staticmethod
    def load_manifest(path) -> dict:
        try:
            with open(path, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ServiceError(f"review manifest {path} is corrupt: {e}")
        for key in ("version", "checkpoint_sha256", "score_config", "records"):
            if key not in manifest:
                raise ServiceError(f"review manifest {path} is corrupt: missing {key!r}")
        return manifest

    # -------------------------------------------------- queries

    def record(self, image_id: str) -> dict:
        rec = self._by_id.get(image_id)
        if rec is None:
            raise KeyError(image_id)
        return rec

    def list_records(self, min_score=None, decision=None, limit=None, offset=0):
        rows = self.records
        if min_score is not None:
            rows = [r for r in rows if r["score"] >= min_score]
        if decision is not None:
            rows = [r for r in rows if r["decision"] == decision]
        total = len(rows)
        rows = rows[offset:]
        if limit is not None:
            rows = rows[:limit]
        return rows, total

    def summary(self) -> dict:
        counts = {"pending": 0, "accept": 0, "reject": 0}
        above = 0
        for r in self.records:
            counts[r["decision"]] += 1
            if r["decision"] == "pending" and r["score"] >= self.threshold:
                above += 1
        return {"counts": counts, "pending_above_threshold": above,
                "threshold": self.threshold, "total": len(self.records)}

    # -------------------------------------------------- mutations

    def decide(self, image_id: str, decision: str, note=None) -> dict:
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, got {decision!r}")
        with self._lock:
            rec = self.record(image_id)
            now = time.time()
            if rec["history"]:
                now = max(now, rec["history"][-1]["decided_at"] + 1e-6)
            rec["decision"] = decision
            rec["decided_at"] = now
            rec["note"] = note
            rec["history"].append({"decision": decision, "decided_at": now,
                                   "note": note})
            self.persist()
            return rec

    def set_threshold(self, value: float) -> None:
        with self._lock:
            self.threshold = float(value)
            self.persist()


# ------------------------------------------------------------------
# score-cache-backed store construction
# ------------------------------------------------------------------

def _score_all(checkpoint, layout, cfg, cache_path):
    cache = {}
    if os.path.exists(cache_path):
        try:
            with open(cache_path, "r", encoding="utf-8") as f:
                cache = json.load(f)
        except json.JSONDecodeError:
            cache = {}  # cache is disposable; recompute
    dirty = False
    for image_id in sorted(layout.ids()):
        if image_id in cache:
            continue
        r = scoring.score(checkpoint, layout.image(image_id), cfg, image_id=image_id)
        cache[image_id] = {"score": r.score, "k_used": r.k_used,
                           "m": r.high_freq_mean, "contributions": r.contributions}
        dirty = True
    if dirty:
        atomic_write_text(cache_path, json.dumps(cache, sort_keys=True))
    return cache


def open_store(checkpoint_path, data_dir, cfg: scoring.ScoreConfig,
               manifest_path) -> tuple:
    """Load or create the review session; returns (store, checkpoint, layout)."""
    checkpoint = ckio.load(checkpoint_path)
    layout = ds.load_dataset(data_dir)
    ckpt_hash = sha256_file(checkpoint_path)
    cfg_hash = _config_hash(cfg)
    cache_path = os.path.join(
        os.path.dirname(os.path.abspath(manifest_path)) or ".",
        f"scorecache-{ckpt_hash[:12]}-{cfg_hash[:12]}.json")

    if os.path.exists(manifest_path):
        manifest = ReviewStore.load_manifest(manifest_path)
        if manifest["checkpoint_sha256"] != ckpt_hash:
            raise ServiceError("review manifest was created with a different checkpoint")
        if manifest.get("score_config_sha256") != cfg_hash:
            raise ServiceError("review manifest was created with a different score config")
        store = ReviewStore(manifest_path, ckpt_hash, cfg, manifest["records"],
                            manifest.get("threshold", 0.0))
        return store, checkpoint, layout

    scores = _score_all(checkpoint, layout, cfg, cache_path)
    records = [{
        "image_id": image_id,
        "score": entry["score"],
        "k_used": entry["k_used"],
        "m": entry["m"],
        "contributions": entry["contributions"],
        "decision": "pending",
        "decided_at": None,
        "note": None,
        "history": [],
    } for image_id, entry in sorted(scores.items())]
    store = ReviewStore(manifest_path, ckpt_hash, cfg, records)
    store.persist()
    return store, checkpoint, layout


# ------------------------------------------------------------------
# HTTP app
# ------------------------------------------------------------------

def build_app(checkpoint_path, data_dir, cfg: scoring.ScoreConfig,
              manifest_path, ui_dir=None) -> FastAPI:
    store, checkpoint, layout = open_store(checkpoint_path, data_dir, cfg,
                                           manifest_path)
    app = FastAPI(title="lqdetect review service")
    png_cache = {}

    def _get_record(image_id):
        try:
            return store.record(image_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")

    @app.get("/api/images")
    def list_images(min_score: Optional[float] = None,
                    decision: Optional[str] = None,
                    limit: Optional[int] = None, offset: int = 0):
        if decision is not None and decision not in ("pending", "accept", "reject"):
            raise HTTPException(status_code=422, detail="bad decision filter")
        rows, total = store.list_records(min_score, decision, limit, offset)
        return {"records": rows, "total": total, "stats": store.summary()}

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        return _get_record(image_id)

    @app.post("/api/images/{image_id}/decision")
    def post_decision(image_id: str, body: DecisionBody):
        rec = _get_record(image_id)
        try:
            return store.decide(rec["image_id"], body.decision, body.note)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))

    @app.get("/api/images/{image_id}/original.png")
    def original_png(image_id: str):
        _get_record(image_id)
        with open(layout.image_path(image_id), "rb") as f:
            return Response(content=f.read(), media_type="image/png")

    @app.get("/api/images/{image_id}/clue.png")
    def clue_png(image_id: str):
        rec = _get_record(image_id)
        key = ("clue", image_id)
        if key not in png_cache:
            # same rng stream the score used, so the clue is the measured recon
            rng = make_rng(cfg.seed, image_id, "skl")
            state = hvae.partial_reconstruct(checkpoint, layout.image(image_id),
                                             rec["k_used"], rng, cfg.n_samples)
            png_cache[key] = ds.png_bytes(state.mean)
        return Response(content=png_cache[key], media_type="image/png")

    @app.get("/api/images/{image_id}/strip.png")
    def strip_png(image_id: str):
        from . import visualize
        _get_record(image_id)
        key = ("strip", image_id)
        if key not in png_cache:
            strip = visualize.recon_strip(checkpoint, layout.image(image_id),
                                          [cfg.k1, cfg.k2], seed=cfg.seed,
                                          n_samples=cfg.n_samples)
            png_cache[key] = ds.png_bytes(strip)
        return Response(content=png_cache[key], media_type="image/png")

    @app.get("/api/session/threshold")
    def get_threshold():
        return {"threshold": store.threshold}

    @app.put("/api/session/threshold")
    def put_threshold(body: ThresholdBody):
        store.set_threshold(body.threshold)
        return {"threshold": store.threshold}

    @app.get("/api/session/summary")
    def summary():
        return store.summary()

    ui_path = ui_dir or os.path.join(os.path.dirname(os.path.dirname(
        os.path.dirname(os.path.abspath(__file__)))), "frontend", "dist")
    if os.path.isdir(ui_path):
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_path, html=True), name="ui")

    app.state.store = store
    return app
