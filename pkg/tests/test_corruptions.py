import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqdetect import corruptions as C
from lqdetect.dataset import gen_clean_corpus, quantize8, dequantize8
from lqdetect.util import make_rng


def _psnr(a, b):
    mse = np.mean((a - b) ** 2)
    return 10 * np.log10(1.0 / max(mse, 1e-12))


@pytest.fixture(scope="module")
def corpus32():
    return gen_clean_corpus(32, seed=77)


# ---------------------------------------------------------------- table

def test_severity_table_complete():
    assert set(C.SEVERITY_TABLE) == set(C.KINDS)
    for kind, rows in C.SEVERITY_TABLE.items():
        assert len(rows) == 5, kind


def test_severity_table_hash_stable():
    assert C.severity_table_hash() == C.severity_table_hash()
    assert len(C.severity_table_hash()) == 64


def test_spec_validation_and_roundtrip():
    with pytest.raises(C.CorruptionError):
        C.CorruptionSpec("snow", 1, 0)
    with pytest.raises(C.CorruptionError):
        C.CorruptionSpec("gaussian_noise", 6, 0)
    spec = C.CorruptionSpec("jpeg_compression", 2, 123)
    assert C.CorruptionSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------- degeneracies

def test_degenerate_parameters_are_identity(corpus32):
    x = corpus32[0][1]
    rng = make_rng(0)
    assert np.array_equal(C._APPLY["gaussian_noise"](x, {"sigma": 0.0}, rng), x)
    assert np.array_equal(C._APPLY["pixelate"](x, {"factor": 1}, rng), x)
    assert np.array_equal(C._APPLY["brightness"](x, {"shift": 0.0}, rng), x)
    assert np.allclose(C._APPLY["contrast"](x, {"factor": 1.0}, rng), x)
    assert np.allclose(C._APPLY["saturate"](x, {"factor": 1.0}, rng), x)


def test_jpeg_max_quality_near_identity(corpus32):
    # smooth natural-statistics input: quantization at q=100 is the only loss
    for _, x in corpus32[:6]:
        out = C.jpeg_roundtrip(x, 100)
        assert _psnr(out, x) >= 40.0


def test_jpeg_low_quality_is_lossy(corpus32):
    x = corpus32[0][1]
    assert _psnr(C.jpeg_roundtrip(x, 7), x) < _psnr(C.jpeg_roundtrip(x, 80), x)


# ---------------------------------------------------------------- apply

@pytest.mark.parametrize("kind", C.KINDS)
@pytest.mark.parametrize("severity", [1, 5])
def test_apply_in_range_and_deterministic(corpus32, kind, severity):
    x = corpus32[1][1]
    spec = C.CorruptionSpec(kind, severity, seed=99)
    out1 = C.apply(x, spec)
    out2 = C.apply(x, spec)
    assert np.array_equal(out1, out2)
    assert np.all(np.isfinite(out1))
    assert out1.min() >= 0.0 and out1.max() <= 1.0
    assert out1.shape == x.shape


def test_apply_rejects_bad_input(corpus32):
    spec = C.CorruptionSpec("gaussian_noise", 1, 0)
    with pytest.raises(C.CorruptionError):
        C.apply(np.ones((32, 32)), spec)
    with pytest.raises(C.CorruptionError):
        C.apply(np.full((3, 32, 32), 1.5), spec)


def test_monotone_damage(corpus32):
    for kind in ("gaussian_noise", "gaussian_blur", "jpeg_compression", "pixelate"):
        mean_psnr = []
        for severity in range(1, 6):
            vals = [_psnr(C.apply(x, C.CorruptionSpec(kind, severity, seed=5)), x)
                    for _, x in corpus32]
            mean_psnr.append(np.mean(vals))
        diffs = np.diff(mean_psnr)
        assert np.all(diffs <= 1e-9), (kind, mean_psnr)


def test_border_kinds_preserve_mean(corpus32):
    for kind in ("elastic_transform", "glass_blur", "motion_blur"):
        for _, x in corpus32:
            out = C.apply(x, C.CorruptionSpec(kind, 1, seed=3))
            assert abs(out.mean() - x.mean()) <= 0.05, kind


def test_grayscale_images_supported():
    x = dequantize8(quantize8(np.random.default_rng(0).random((1, 16, 16))))
    for kind in C.KINDS:
        out = C.apply(x, C.CorruptionSpec(kind, 1, seed=1))
        assert out.shape == x.shape


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_apply_pure_function_of_spec(seed):
    x = gen_clean_corpus(1, seed=4)[0][1]
    spec = C.CorruptionSpec("speckle_noise", 2, seed)
    assert np.array_equal(C.apply(x, spec), C.apply(x, spec))


# ---------------------------------------------------------------- benchmark

def test_benchmark_single_kind_balanced(corpus32):
    items = C.build_benchmark(corpus32, ["gaussian_noise"], 1, seed=11)
    labels = [it.label for it in items]
    assert labels.count("clean") == 16 and labels.count("corrupted") == 16
    assert len({it.image_id for it in items}) == 32  # disjoint sources


def test_benchmark_deterministic(corpus32):
    a = C.build_benchmark(corpus32, ["jpeg_compression"], 1, seed=7)
    b = C.build_benchmark(corpus32, ["jpeg_compression"], 1, seed=7)
    for x, y in zip(a, b):
        assert x.image_id == y.image_id and x.label == y.label
        assert np.array_equal(x.image, y.image)
        assert x.spec == y.spec


def test_benchmark_pooled_counts_balanced():
    corpus = gen_clean_corpus(64, seed=13)
    items = C.build_benchmark(corpus, list(C.KINDS), 1, seed=29)
    counts = {}
    for it in items:
        if it.spec is not None:
            counts[it.spec.kind] = counts.get(it.spec.kind, 0) + 1
    assert sum(counts.values()) == 32
    assert max(counts.values()) - min(counts.values()) <= 1


def test_benchmark_rejects_bad_args(corpus32):
    with pytest.raises(C.CorruptionError):
        C.build_benchmark([], ["gaussian_noise"], 1, 0)
    with pytest.raises(C.CorruptionError):
        C.build_benchmark(corpus32, [], 1, 0)
    with pytest.raises(C.CorruptionError):
        C.build_benchmark(corpus32, ["fog"], 1, 0)
