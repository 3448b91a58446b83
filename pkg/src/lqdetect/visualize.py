"""Gallery rendering: [input | reconstruction | partial reconstructions]."""

from __future__ import annotations

import numpy as np

from . import hvae
from .util import make_rng


def recon_strip(checkpoint, x, ks, seed: int, n_samples: int = 1) -> np.ndarray:
    """Horizontal strip (C,H,(2+len(ks))*W): input, full recon, partials."""
    x = np.asarray(x, dtype=np.float64)
    tiles = [x]
    tiles.append(hvae.reconstruct(checkpoint, x, make_rng(seed, "recon"), n_samples).mean)
    for k in ks:
        state = hvae.partial_reconstruct(checkpoint, x, k, make_rng(seed, f"k{k}"),
                                         n_samples)
        tiles.append(state.mean)
    return np.concatenate(tiles, axis=2)


def pair_grid(pairs) -> np.ndarray:
    """Stack (left, right) image pairs into a (C, rows*H, 2*W) grid."""
    rows = [np.concatenate([a, b], axis=2) for a, b in pairs]
    return np.concatenate(rows, axis=1)
