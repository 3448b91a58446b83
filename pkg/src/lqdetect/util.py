"""Shared plumbing: seeded rng streams, canonical JSON, atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np


def make_rng(*parts) -> np.random.Generator:
    """Deterministic generator from a mix of ints and strings.

    String parts are hashed so per-image streams depend on stable ids,
    not on dataset order.
    """
    entropy = []
    for p in parts:
        if isinstance(p, str):
            entropy.append(int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "little"))
        elif isinstance(p, (int, np.integer)):
            entropy.append(int(p) & 0xFFFFFFFFFFFFFFFF)
        else:
            raise TypeError(f"rng part must be int or str, got {type(p)}")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def canonical_json(obj) -> str:
    """Stable key order, compact separators; byte-identical across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write-ahead to a temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
