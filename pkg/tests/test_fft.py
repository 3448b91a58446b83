import numpy as np
import pytest

from lqdetect.fft import ComplexGrid, fft2d, fftshift2, magnitude
from oracles import dft2_direct


def test_constant_image_is_dc_only():
    c = 0.37
    grid = fft2d(np.full((8, 8), c))
    assert abs(grid.real[0, 0] - 64 * c) < 1e-12
    assert abs(grid.imag[0, 0]) < 1e-12
    rest = magnitude(grid).copy()
    rest[0, 0] = 0.0
    assert np.max(rest) < 1e-12


def test_single_cosine_tone():
    h = np.arange(8)
    x = np.cos(2 * np.pi * h / 8)[:, None] * np.ones((1, 8))
    mag = magnitude(fft2d(x))
    hot = {(1, 0), (7, 0)}
    for u in range(8):
        for v in range(8):
            if (u, v) in hot:
                assert mag[u, v] > 1.0
            else:
                assert mag[u, v] < 1e-9


def test_matches_direct_dft_oracle():
    rng = np.random.default_rng(42)
    for _ in range(5):
        x = rng.normal(size=(16, 16))
        got = fft2d(x)
        want = dft2_direct(x)
        err = np.max(np.hypot(got.real - want.real, got.imag - want.imag))
        assert err < 1e-9


def test_parseval():
    rng = np.random.default_rng(7)
    for shape in [(8, 8), (16, 16), (32, 32), (8, 16)]:
        x = rng.normal(size=shape)
        grid = fft2d(x)
        lhs = np.sum(x * x) * shape[0] * shape[1]
        rhs = np.sum(grid.real**2 + grid.imag**2)
        assert abs(lhs - rhs) / abs(lhs) < 1e-9


def test_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft2d(np.ones((6, 8)))
    with pytest.raises(ValueError):
        fft2d(np.ones((8, 12)))


def test_rejects_non_2d():
    with pytest.raises(ValueError):
        fft2d(np.ones((3, 8, 8)))


def test_fftshift_centers_dc():
    x = np.zeros((8, 8))
    x[0, 0] = 1.0
    assert fftshift2(x)[4, 4] == 1.0


def test_complex_grid_shape_invariant():
    with pytest.raises(ValueError):
        ComplexGrid(real=np.zeros((2, 2)), imag=np.zeros((3, 2)))
