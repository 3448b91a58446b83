"""Dataset layout, 8-bit PNG round-tripping, and the procedural clean corpus.

A dataset directory holds images/ (PNG), manifest.json (ids, labels,
corruption specs, severity-table hash) and optional train/val/test splits.
All scoring happens on 8-bit-quantized pixel data so stored and in-memory
images never diverge.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .corruptions import CorruptionSpec, severity_table_hash
from .util import atomic_write_text, make_rng

MANIFEST_NAME = "manifest.json"


class DatasetError(ValueError):
    pass


# ------------------------------------------------------------------
# 8-bit PNG round trip
# ------------------------------------------------------------------

def quantize8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def dequantize8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def save_png(path, img_chw: np.ndarray) -> None:
    raw = quantize8(img_chw)
    if raw.shape[0] == 1:
        pil = Image.fromarray(raw[0], mode="L")
    elif raw.shape[0] == 3:
        pil = Image.fromarray(raw.transpose(1, 2, 0), mode="RGB")
    else:
        raise DatasetError(f"unsupported channel count {raw.shape[0]}")
    pil.save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as pil:
        arr = np.asarray(pil)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return dequantize8(arr)


def png_bytes(img_chw: np.ndarray) -> bytes:
    import io
    buf = io.BytesIO()
    raw = quantize8(img_chw)
    if raw.shape[0] == 1:
        Image.fromarray(raw[0], mode="L").save(buf, format="PNG")
    else:
        Image.fromarray(raw.transpose(1, 2, 0), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# ------------------------------------------------------------------
# manifest + layout
# ------------------------------------------------------------------

@dataclass
class DatasetLayout:
    root: str
    manifest: dict
    _cache: dict = field(default_factory=dict)

    @property
    def records(self) -> list:
        return self.manifest["images"]

    def ids(self) -> list:
        return [r["id"] for r in self.records]

    def record(self, image_id: str) -> dict:
        for r in self.records:
            if r["id"] == image_id:
                return r
        raise DatasetError(f"unknown image id {image_id!r}")

    def image(self, image_id: str) -> np.ndarray:
        if image_id not in self._cache:
            rec = self.record(image_id)
            self._cache[image_id] = load_png(os.path.join(self.root, rec["file"]))
        return self._cache[image_id]

    def image_path(self, image_id: str) -> str:
        return os.path.join(self.root, self.record(image_id)["file"])

    def split(self, name: str) -> list:
        return list(self.manifest.get("splits", {}).get(name, []))

    def labels(self) -> dict:
        return {r["id"]: r["label"] for r in self.records}


def write_dataset(out_dir, items, splits=None, meta=None) -> DatasetLayout:
    """Persist (id, image, label, spec) tuples as PNGs plus manifest.

    items: iterable of dicts or corruption BenchmarkItems.
    """
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    records = []
    for it in items:
        if hasattr(it, "image_id"):
            rec_id, image, label, spec = it.image_id, it.image, it.label, it.spec
        else:
            rec_id, image, label, spec = it["id"], it["image"], it["label"], it.get("spec")
        fname = f"images/{rec_id}.png"
        save_png(os.path.join(out_dir, fname), image)
        records.append({
            "id": rec_id,
            "file": fname,
            "label": label,
            "corruption": spec.to_dict() if isinstance(spec, CorruptionSpec) else spec,
        })
    records.sort(key=lambda r: r["id"])
    manifest = {
        "images": records,
        "severity_table_sha256": severity_table_hash(),
    }
    if splits:
        ids = {r["id"] for r in records}
        seen = set()
        for name, split_ids in splits.items():
            for i in split_ids:
                if i not in ids:
                    raise DatasetError(f"split {name!r} references unknown id {i!r}")
                if i in seen:
                    raise DatasetError(f"id {i!r} appears in more than one split")
                seen.add(i)
        manifest["splits"] = {k: list(v) for k, v in splits.items()}
    if meta:
        manifest["meta"] = meta
    atomic_write_text(os.path.join(out_dir, MANIFEST_NAME),
                      json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return DatasetLayout(root=os.fspath(out_dir), manifest=manifest)


def load_dataset(root) -> DatasetLayout:
    mpath = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(mpath):
        raise DatasetError(f"no {MANIFEST_NAME} under {root}")
    with open(mpath, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    layout = DatasetLayout(root=os.fspath(root), manifest=manifest)
    for r in layout.records:
        if not os.path.exists(os.path.join(root, r["file"])):
            raise DatasetError(f"manifest id {r['id']!r} has no file {r['file']!r}")
    return layout


# ------------------------------------------------------------------
# procedural clean corpus
# ------------------------------------------------------------------

def _disk_mask(h, w, cy, cx, radius):
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(radius - d + 0.5, 0.0, 1.0)  # soft 1px edge


def _rect_mask(h, w, y0, x0, y1, x1):
    yy, xx = np.mgrid[0:h, 0:w]
    inside_y = np.clip(np.minimum(yy - y0, y1 - yy) + 0.5, 0.0, 1.0)
    inside_x = np.clip(np.minimum(xx - x0, x1 - xx) + 0.5, 0.0, 1.0)
    return inside_y * inside_x


def gen_clean_image(rng: np.random.Generator, shape=(3, 32, 32)) -> np.ndarray:
    """Structured synthetic image: gradient background, solid shapes with
    soft edges, and a fine oriented grating. Global layout drives high-level
    latents; the grating gives blur and compression something to destroy."""
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    col_a = rng.uniform(0.15, 0.85, size=c)
    col_b = rng.uniform(0.15, 0.85, size=c)
    img = col_a[:, None, None] * (1 - ramp) + col_b[:, None, None] * ramp

    for _ in range(rng.integers(1, 4)):
        color = rng.uniform(0.05, 0.95, size=c)
        if rng.random() < 0.5:
            mask = _disk_mask(h, w, rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w,
                              rng.uniform(0.1, 0.28) * h)
        else:
            y0, x0 = rng.uniform(0.05, 0.55, size=2) * np.array([h, w])
            y1 = y0 + rng.uniform(0.2, 0.4) * h
            x1 = x0 + rng.uniform(0.2, 0.4) * w
            mask = _rect_mask(h, w, y0, x0, y1, x1)
        img = img * (1 - mask) + color[:, None, None] * mask

    freq = rng.uniform(3.0, 7.0)
    phi = rng.uniform(0, 2 * np.pi)
    gtheta = rng.uniform(0, np.pi)
    grating = np.sin(2 * np.pi * freq * (np.cos(gtheta) * xx + np.sin(gtheta) * yy) + phi)
    img = img + rng.uniform(0.03, 0.08) * grating[None]
    return np.clip(img, 0.0, 1.0)


def gen_clean_corpus(n: int, seed: int, shape=(3, 32, 32), prefix="clean"):
    """Seeded list of (image_id, image); ids are stable across runs."""
    out = []
    for i in range(n):
        image_id = f"{prefix}-{i:05d}"
        img = gen_clean_image(make_rng(seed, image_id), shape)
        # match what scoring will see after the 8-bit PNG round trip
        out.append((image_id, dequantize8(quantize8(img))))
    return out
