"""Radix-2 2D discrete Fourier transform for power-of-two grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ComplexGrid", "fft2d", "fftshift2", "magnitude"]


@dataclass
class ComplexGrid:
    """Real/imaginary parts of an H x W frequency grid."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError("real and imaginary parts must share shape")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft1d_last(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey along the last axis (length power of two)."""
    n = a.shape[-1]
    x = np.ascontiguousarray(a[..., _bit_reverse_indices(n)], dtype=np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        xv = x.reshape(-1, n // m, m)
        upper = xv[..., :half].copy()
        lower = xv[..., half:] * tw
        xv[..., :half] = upper + lower
        xv[..., half:] = upper - lower
        m *= 2
    return x


def fft2d(image) -> ComplexGrid:
    """Unnormalized forward 2D DFT: X[u,v] = sum x[h,w] e^{-2pi i(uh/H + vw/W)}.

    Accepts an H x W array (or Tensor); H and W must be powers of two.
    """
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"fft2d expects a 2D grid, got shape {data.shape}")
    h, w = data.shape
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ValueError(f"extents must be powers of two, got {h}x{w}")
    rows = _fft1d_last(data.astype(np.complex128))
    full = _fft1d_last(rows.T).T
    return ComplexGrid(real=np.ascontiguousarray(full.real),
                       imag=np.ascontiguousarray(full.imag))


def fftshift2(grid: np.ndarray) -> np.ndarray:
    """Move the zero-frequency bin to the grid center."""
    h, w = grid.shape
    return np.roll(np.roll(grid, h // 2, axis=0), w // 2, axis=1)


def magnitude(grid: ComplexGrid) -> np.ndarray:
    return np.hypot(grid.real, grid.imag)
