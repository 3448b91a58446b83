"""Seeded synthesis of severity-graded common corruptions.

Images are (C,H,W) float64 in [0,1]. Every kind is a pure function of
(image, spec): the spec carries the rng seed. Kernel-based kinds use
reflect padding so no dark frame leaks label information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .util import canonical_json, sha256_bytes

KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise", "speckle_noise",
    "defocus_blur", "gaussian_blur", "glass_blur", "motion_blur", "zoom_blur",
    "brightness", "contrast", "saturate", "pixelate", "jpeg_compression",
    "elastic_transform",
)

# Severity 1..5 parameters. Intensity-like values (noise sigmas, Poisson
# rates, photometric factors, JPEG quality) follow the reference corruption
# benchmark verbatim; geometry-like values (blur radii, swap distances,
# displacement fields, pixelation factors) use its 32-pixel calibration,
# since scaling 224-pixel radii down by 7x collapses them to the identity.
SEVERITY_TABLE = {
    "gaussian_noise": [{"sigma": s} for s in (0.08, 0.12, 0.18, 0.26, 0.38)],
    "shot_noise": [{"lam": l} for l in (60.0, 25.0, 12.0, 5.0, 3.0)],
    "impulse_noise": [{"amount": a} for a in (0.03, 0.06, 0.09, 0.17, 0.27)],
    "speckle_noise": [{"sigma": s} for s in (0.15, 0.2, 0.35, 0.45, 0.6)],
    "gaussian_blur": [{"sigma": s} for s in (0.4, 0.6, 0.7, 0.8, 1.0)],
    "defocus_blur": [{"radius": r, "alias": a} for r, a in
                     ((0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (1.0, 0.2), (1.5, 0.1))],
    "glass_blur": [{"sigma": s, "delta": d, "iterations": i} for s, d, i in
                   ((0.05, 1, 1), (0.25, 1, 1), (0.4, 1, 1), (0.25, 1, 2), (1.6, 4, 4))],
    "motion_blur": [{"radius": r, "sigma": s} for r, s in
                    ((6, 1.0), (6, 1.5), (6, 2.0), (8, 2.0), (9, 2.5))],
    "zoom_blur": [{"max_zoom": z, "step": 0.01} for z in (1.06, 1.11, 1.16, 1.21, 1.26)],
    "brightness": [{"shift": b} for b in (0.1, 0.2, 0.3, 0.4, 0.5)],
    "contrast": [{"factor": c} for c in (0.4, 0.3, 0.2, 0.1, 0.05)],
    "saturate": [{"factor": s} for s in (0.3, 0.1, 2.0, 5.0, 20.0)],
    "pixelate": [{"factor": f} for f in (2, 2, 4, 4, 8)],
    "jpeg_compression": [{"quality": q} for q in (25, 18, 15, 10, 7)],
    "elastic_transform": [{"alpha": a, "smooth": s} for a, s in
                          ((1.5, 6.0), (2.5, 5.0), (3.5, 4.0), (4.5, 3.5), (6.0, 3.0))],
}


class CorruptionError(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorruptionError(f"unsupported kind {self.kind!r}; supported: {', '.join(KINDS)}")
        if not 1 <= self.severity <= 5:
            raise CorruptionError(f"severity must be in [1,5], got {self.severity}")

    def params(self) -> dict:
        return SEVERITY_TABLE[self.kind][self.severity - 1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "severity": self.severity, "seed": self.seed}

    @staticmethod
    def from_dict(d) -> "CorruptionSpec":
        return CorruptionSpec(d["kind"], int(d["severity"]), int(d["seed"]))


def severity_table_hash() -> str:
    return sha256_bytes(canonical_json(SEVERITY_TABLE).encode())


# ------------------------------------------------------------------
# low-level helpers (reflect boundary everywhere)
# ------------------------------------------------------------------

def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-t * t / (2.0 * sigma * sigma)) if sigma > 0 else (t == 0).astype(float)
    return k / k.sum()


def _sep_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of (...,H,W) with reflect padding."""
    if sigma <= 0:
        return x.copy()
    k = _gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    for axis in (-2, -1):
        pad = [(0, 0)] * x.ndim
        pad[axis] = (r, r)
        xp = np.pad(x, pad, mode="reflect")
        out = np.zeros_like(x)
        for i, w in enumerate(k):
            sl = [slice(None)] * x.ndim
            sl[axis] = slice(i, i + x.shape[axis])
            out += w * xp[tuple(sl)]
        x = out
    return x


def _kernel_filter(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve each channel of (C,H,W) with a 2D kernel, reflect padding."""
    kh, kw = kernel.shape
    rh, rw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (rh, rh), (rw, rw)), mode="reflect")
    out = np.zeros_like(x)
    h, w = x.shape[1:]
    for i in range(kh):
        for j in range(kw):
            if kernel[i, j] != 0.0:
                out += kernel[i, j] * xp[:, i:i + h, j:j + w]
    return out


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _bilinear_sample(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C,H,W) at float coordinate grids with reflect boundary."""
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    h, w = x.shape[1:]
    y0r, y1r = _reflect_index(y0, h), _reflect_index(y0 + 1, h)
    x0r, x1r = _reflect_index(x0, w), _reflect_index(x0 + 1, w)
    p00 = x[:, y0r, x0r]
    p01 = x[:, y0r, x1r]
    p10 = x[:, y1r, x0r]
    p11 = x[:, y1r, x1r]
    top = p00 * (1 - wx) + p01 * wx
    bot = p10 * (1 - wx) + p11 * wx
    return top * (1 - wy) + bot * wy


def _center_zoom(x: np.ndarray, factor: float) -> np.ndarray:
    h, w = x.shape[1:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear_sample(x, (yy - cy) / factor + cy, (xx - cx) / factor + cx)


# ------------------------------------------------------------------
# JPEG codec: 8x8 DCT quantize/dequantize, no subsampling, no entropy stage
# ------------------------------------------------------------------

_Q_LUM = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_Q_CHR = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def _dct_matrix8() -> np.ndarray:
    n = 8
    c = np.zeros((n, n))
    for k in range(n):
        a = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        for m in range(n):
            c[k, m] = a * math.cos(math.pi * (2 * m + 1) * k / (2 * n))
    return c


_DCT8 = _dct_matrix8()


def _scaled_quant(table: np.ndarray, quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise CorruptionError(f"jpeg quality must be in [1,100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((table * s + 50.0) / 100.0), 1.0, 255.0)


def _codec_channel(ch: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Quantize/dequantize one channel (values in 0..255, extents % 8 == 0)."""
    h, w = ch.shape
    blocks = (ch - 128.0).reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    coef = np.einsum("ab,ijbc,dc->ijad", _DCT8, blocks, _DCT8)
    coef = np.round(coef / q) * q
    rec = np.einsum("ba,ijbc,cd->ijad", _DCT8, coef, _DCT8)
    return rec.transpose(0, 2, 1, 3).reshape(h, w) + 128.0


def jpeg_roundtrip(x: np.ndarray, quality: int) -> np.ndarray:
    """Internal JPEG: RGB->YCbCr, blockwise DCT quantization, back to RGB."""
    c, h, w = x.shape
    ph, pw = (-h) % 8, (-w) % 8
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect") if (ph or pw) else x
    v = xp * 255.0
    if c == 3:
        r, g, b = v
        y = 0.299 * r + 0.587 * g + 0.114 * b
        cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
        cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
        y = _codec_channel(y, _scaled_quant(_Q_LUM, quality))
        qc = _scaled_quant(_Q_CHR, quality)
        cb = _codec_channel(cb, qc)
        cr = _codec_channel(cr, qc)
        r = y + 1.402 * (cr - 128.0)
        g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0)
        b = y + 1.772 * (cb - 128.0)
        out = np.stack([r, g, b])
    else:
        out = np.stack([_codec_channel(ch, _scaled_quant(_Q_LUM, quality)) for ch in v])
    out = out[:, :h, :w]
    return np.clip(out / 255.0, 0.0, 1.0)


# ------------------------------------------------------------------
# corruption kinds
# ------------------------------------------------------------------

def _gaussian_noise(x, p, rng):
    return x + rng.normal(0.0, p["sigma"], size=x.shape)


def _shot_noise(x, p, rng):
    lam = p["lam"]
    return rng.poisson(x * lam) / lam


def _impulse_noise(x, p, rng):
    u = rng.random(x.shape[1:])
    out = x.copy()
    out[:, u < p["amount"] / 2] = 1.0
    out[:, u > 1.0 - p["amount"] / 2] = 0.0
    return out


def _speckle_noise(x, p, rng):
    return x + x * rng.normal(0.0, p["sigma"], size=x.shape)


def _gaussian_blur(x, p, rng):
    return _sep_blur(x, p["sigma"])


def _defocus_blur(x, p, rng):
    r, alias = p["radius"], p["alias"]
    extent = max(1, int(math.ceil(r + 3.0 * alias)))
    t = np.arange(-extent, extent + 1, dtype=np.float64)
    yy, xx = np.meshgrid(t, t, indexing="ij")
    kernel = (yy * yy + xx * xx <= r * r).astype(np.float64)
    kernel = _sep_blur(kernel, alias)
    return _kernel_filter(x, kernel / kernel.sum())


def _glass_blur(x, p, rng):
    sigma, delta, iters = p["sigma"], int(p["delta"]), int(p["iterations"])
    out = _sep_blur(x, sigma)
    h, w = out.shape[1:]
    for _ in range(iters):
        for i in range(h - delta, delta, -1):
            for j in range(w - delta, delta, -1):
                dy, dx = rng.integers(-delta, delta, size=2)  # high-exclusive
                ii, jj = i + dy, j + dx
                tmp = out[:, i, j].copy()
                out[:, i, j] = out[:, ii, jj]
                out[:, ii, jj] = tmp
    return _sep_blur(out, sigma)


def _motion_blur(x, p, rng):
    radius, sigma = int(p["radius"]), p["sigma"]
    angle = math.radians(rng.uniform(-45.0, 45.0))
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-taps * taps / (2.0 * sigma * sigma))
    size = 2 * radius + 1
    kernel = np.zeros((size, size))
    for t, wgt in zip(taps, weights):
        dy = int(round(t * math.sin(angle)))
        dx = int(round(t * math.cos(angle)))
        kernel[radius + dy, radius + dx] += wgt
    return _kernel_filter(x, kernel / kernel.sum())


def _zoom_blur(x, p, rng):
    factors = np.arange(1.0, p["max_zoom"], p["step"])
    acc = x.copy()
    for f in factors[1:]:
        acc += _center_zoom(x, f)
    return acc / len(factors)


def _brightness(x, p, rng):
    return x + p["shift"]


def _contrast(x, p, rng):
    means = x.mean(axis=(1, 2), keepdims=True)
    return (x - means) * p["factor"] + means


def _saturate(x, p, rng):
    gray = x.mean(axis=0, keepdims=True)
    return gray + (x - gray) * p["factor"]


def _pixelate(x, p, rng):
    f = int(p["factor"])
    c, h, w = x.shape
    if h % f or w % f:
        raise CorruptionError(f"pixelate factor {f} must divide extents {h}x{w}")
    down = x.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))
    return np.repeat(np.repeat(down, f, axis=1), f, axis=2)


def _jpeg_compression(x, p, rng):
    return jpeg_roundtrip(x, int(p["quality"]))


def _elastic_transform(x, p, rng):
    h, w = x.shape[1:]
    dy = _sep_blur(rng.uniform(-1.0, 1.0, size=(h, w)), p["smooth"]) * p["alpha"]
    dx = _sep_blur(rng.uniform(-1.0, 1.0, size=(h, w)), p["smooth"]) * p["alpha"]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear_sample(x, yy + dy, xx + dx)


_APPLY = {
    "gaussian_noise": _gaussian_noise,
    "shot_noise": _shot_noise,
    "impulse_noise": _impulse_noise,
    "speckle_noise": _speckle_noise,
    "defocus_blur": _defocus_blur,
    "gaussian_blur": _gaussian_blur,
    "glass_blur": _glass_blur,
    "motion_blur": _motion_blur,
    "zoom_blur": _zoom_blur,
    "brightness": _brightness,
    "contrast": _contrast,
    "saturate": _saturate,
    "pixelate": _pixelate,
    "jpeg_compression": _jpeg_compression,
    "elastic_transform": _elastic_transform,
}


def apply(x: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Corrupt one image; pure function of (x, spec), output clipped to [0,1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise CorruptionError(f"expected (C,H,W) image, got shape {x.shape}")
    if np.min(x) < -1e-9 or np.max(x) > 1 + 1e-9:
        raise CorruptionError("image values must lie in [0,1]")
    rng = np.random.default_rng(spec.seed)
    out = _APPLY[spec.kind](x, spec.params(), rng)
    return np.clip(out, 0.0, 1.0)


# ------------------------------------------------------------------
# benchmark construction
# ------------------------------------------------------------------

@dataclass
class BenchmarkItem:
    image_id: str
    image: np.ndarray
    label: str                      # "clean" | "corrupted"
    spec: CorruptionSpec | None


def _derive_seed(seed: int, image_id: str, kind: str) -> int:
    return int(sha256_bytes(f"{seed}:{image_id}:{kind}".encode())[:16], 16) % (2**63)


def build_benchmark(clean_set, kinds, severity: int, seed: int) -> list:
    """50/50 clean/corrupted split over disjoint source images.

    clean_set: list of (image_id, image). With one kind this is a
    per-corruption benchmark; with several, the corrupted half is spread
    uniformly over kinds (per-kind counts differ by at most 1).
    """
    if not clean_set:
        raise CorruptionError("clean_set must be non-empty")
    if not kinds:
        raise CorruptionError("kinds must be non-empty")
    for k in kinds:
        if k not in KINDS:
            raise CorruptionError(f"unsupported kind {k!r}; supported: {', '.join(KINDS)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBE9C]))
    order = rng.permutation(len(clean_set))
    half = len(clean_set) // 2
    items = []
    for pos, idx in enumerate(order):
        image_id, image = clean_set[idx]
        if pos < half:
            kind = kinds[pos % len(kinds)]
            spec = CorruptionSpec(kind, severity, _derive_seed(seed, image_id, kind))
            items.append(BenchmarkItem(image_id, apply(image, spec), "corrupted", spec))
        else:
            items.append(BenchmarkItem(image_id, np.asarray(image, dtype=np.float64),
                                       "clean", None))
    items.sort(key=lambda it: it.image_id)
    return items
