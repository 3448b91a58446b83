import numpy as np
import pytest

from lqdetect import hvae


def make_toy_images(n, seed, size=8):
    """Tiny grayscale corpus: smooth gradient + bright disk, learnable fast."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    out = np.empty((n, 1, size, size))
    for i in range(n):
        a, b = rng.uniform(0.1, 0.6, size=2)
        img = a * yy + b * xx
        cy, cx = rng.uniform(0.2, 0.8, size=2) * (size - 1)
        rad = rng.uniform(0.15, 0.3) * size
        d2 = (np.mgrid[0:size, 0:size][0] - cy) ** 2 + (np.mgrid[0:size, 0:size][1] - cx) ** 2
        img = img + rng.uniform(0.3, 0.6) * np.exp(-d2 / (2 * rad**2))
        out[i, 0] = np.clip(img, 0.0, 1.0)
    return out


TOY_CONFIG = hvae.HvaeConfig(
    image_shape=(1, 8, 8),
    layers=(hvae.LayerSpec(2, 4), hvae.LayerSpec(3, 2), hvae.LayerSpec(4, 1)),
    hidden_channels=8,
)


@pytest.fixture(scope="session")
def toy_config():
    return TOY_CONFIG


@pytest.fixture(scope="session")
def toy_images():
    return make_toy_images(64, seed=101)


@pytest.fixture(scope="session")
def toy_checkpoint(toy_images):
    """Small trained model shared by hvae/scoring tests."""
    hp = hvae.TrainParams(lr=3e-3, epochs=40, batch_size=16, seed=5,
                          kl_warmup_epochs=8)
    return hvae.train(toy_images, TOY_CONFIG, hp)


@pytest.fixture()
def untrained_checkpoint():
    return hvae.HvaeCheckpoint(TOY_CONFIG, hvae.init_params(TOY_CONFIG, 3), {})
