import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxot import autodiff as ad
from ctxot.autodiff import DimensionError, Tensor
from ctxot.features import EncoderSpec, encode, encode_batch, read_features, write_features
from ctxot.fileio import FormatError
from ctxot.retina import RetinaSpec, generate
from ctxot.transport import FeatureSet, contextual_cost
from oracles import rel_error


@pytest.fixture(scope="module")
def fundus():
    return generate(RetinaSpec(size=64, seed=3))


def test_shape_and_unit_norm(fundus):
    fs = encode(fundus)
    assert (fs.count, fs.dim) == (64, 64)
    norms = np.linalg.norm(fs.array, axis=1)
    # patches entirely outside the field of view have no activation at all
    dead = norms == 0.0
    assert np.all(np.abs(norms[~dead] - 1.0) <= 1e-9)
    assert dead.sum() < fs.count // 4
    assert encode(np.random.default_rng(0).uniform(size=(64, 64, 3))).is_unit(1e-9)


def test_zero_image_gives_equal_finite_vectors():
    fs = encode(np.zeros((16, 16, 3)))
    assert np.all(np.isfinite(fs.array))
    assert np.all(fs.array == fs.array[0])


def test_indivisible_size_rejected():
    with pytest.raises(DimensionError):
        encode(np.zeros((20, 16, 3)))
    with pytest.raises(DimensionError):
        encode(np.zeros((16, 16)))


def test_filters_orthonormal():
    for stage in EncoderSpec().filters():
        rows = stage.reshape(stage.shape[0], -1)
        gram = rows @ rows.T
        np.testing.assert_allclose(np.diag(gram), 1.0, atol=1e-12)
        if rows.shape[0] <= rows.shape[1]:
            np.testing.assert_allclose(gram, np.eye(rows.shape[0]), atol=1e-12)


def test_spec_determinism(fundus):
    a = encode(fundus, EncoderSpec(seed=5)).array
    b = encode(fundus, EncoderSpec(seed=5)).array
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, encode(fundus, EncoderSpec(seed=6)).array)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 20.0))
def test_positive_scaling_leaves_features_unchanged(scale):
    img = generate(RetinaSpec(size=32, seed=1))
    np.testing.assert_allclose(encode(scale * img).array, encode(img).array, atol=1e-10)


def test_shift_by_stride_permutes_interior(fundus):
    spec = EncoderSpec()
    base = encode(fundus, spec).array.reshape(8, 8, -1)
    shifted = encode(np.roll(fundus, 8, axis=1), spec).array.reshape(8, 8, -1)
    # receptive fields near the borders see padding or the wrapped column
    np.testing.assert_allclose(shifted[1:-1, 3:-1], base[1:-1, 2:-2], atol=1e-12)


def test_gradient_flows_to_image():
    img = Tensor(generate(RetinaSpec(size=32, seed=2)), requires_grad=True)
    ref = encode(generate(RetinaSpec(size=32, seed=4)))
    loss = contextual_cost(ref, encode(img), 0.5)
    (g,) = ad.grad(loss, [img])
    assert g is not None and np.any(g.data != 0)


def test_batch_matches_single(fundus):
    batch = np.stack([fundus, fundus[::-1]])
    out = encode_batch(Tensor(batch.transpose(0, 3, 1, 2)))
    np.testing.assert_array_equal(out[0].array, encode(fundus).array)
    np.testing.assert_array_equal(out[1].array, encode(fundus[::-1]).array)


def test_feature_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    fs = FeatureSet.from_raw(rng.standard_normal((5, 7)))
    write_features(tmp_path / "a.ctxf", fs)
    back = read_features(tmp_path / "a.ctxf")
    np.testing.assert_array_equal(back.array, fs.array.astype(np.float32).astype(np.float64))
    write_features(tmp_path / "b.ctxf", back)
    assert (tmp_path / "a.ctxf").read_bytes() == (tmp_path / "b.ctxf").read_bytes()
    raw = (tmp_path / "a.ctxf").read_bytes()
    assert raw[:4] == b"CTXF" and len(raw) == 12 + 4 * 35


def test_feature_file_errors(tmp_path):
    bad = tmp_path / "bad.ctxf"
    bad.write_bytes(b"XXXX" + np.array([1, 1], "<u4").tobytes() + np.zeros(1, "<f4").tobytes())
    with pytest.raises(FormatError, match="magic"):
        read_features(bad)
    bad.write_bytes(b"CTXF" + np.array([2, 3], "<u4").tobytes() + np.zeros(5, "<f4").tobytes())
    with pytest.raises(FormatError, match="truncated"):
        read_features(bad)
    bad.write_bytes(b"CTXF" + np.array([1, 2], "<u4").tobytes() + np.array([np.nan, 1], "<f4").tobytes())
    with pytest.raises(FormatError, match="finite"):
        read_features(bad)


def test_full_loss_path_gradient_on_tiny_generator():
    # contextual_cost(encode(y), encode(g(y))) with g a 1x1 colour mixer
    y = generate(RetinaSpec(size=32, seed=8))[8:24, 8:24]
    ref = encode(y)
    x = Tensor(y.transpose(2, 0, 1)[None])
    w0 = np.eye(3).reshape(3, 3, 1, 1) + np.random.default_rng(1).normal(0, 0.1, (3, 3, 1, 1))

    def loss(w):
        out = ad.sigmoid(ad.conv2d(x, w))
        return contextual_cost(ref, encode_batch(out)[0], 0.5)

    leaf = Tensor(w0, requires_grad=True)
    (g,) = ad.grad(loss(leaf), [leaf])
    num = np.zeros(w0.size)
    for i in range(w0.size):
        for sign in (1, -1):
            w = w0.copy().reshape(-1)
            w[i] += sign * 1e-5
            num[i] += sign * loss(Tensor(w.reshape(w0.shape))).item() / 2e-5
    assert rel_error(g.data, num) < 1e-3
