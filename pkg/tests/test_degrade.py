import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxot.degrade import SUITE, Applied, DegradeConfig, InputError, degrade, degrade_suite, gaussian_kernel1d
from ctxot.metrics import psnr
from ctxot.retina import RetinaSpec, generate


@pytest.fixture(scope="module")
def image():
    return generate(RetinaSpec(size=64, seed=1))


def test_all_disabled_is_identity(image):
    cfg = DegradeConfig(seed=3, illum_enabled=False, blur_enabled=False, spots_enabled=False)
    out, applied = degrade(image, cfg)
    assert out.tobytes() == image.tobytes() and applied.warning


def test_determinism(image):
    a, pa = degrade(image, DegradeConfig(seed=11))
    b, pb = degrade(image, DegradeConfig(seed=11))
    assert a.tobytes() == b.tobytes() and pa == pb
    assert not np.array_equal(a, degrade(image, DegradeConfig(seed=12))[0])


def test_blur_on_dot_against_direct_convolution():
    img = np.zeros((33, 33, 3))
    img[16, 16] = 1.0
    cfg = DegradeConfig(seed=0, illum_enabled=False, spots_enabled=False, blur_sigma=(2.0, 2.0))
    out, applied = degrade(img, cfg)
    assert applied.blur.sigma == 2.0
    assert out[16, 16, 0] < 1.0
    assert abs(out[..., 0].sum() - 1.0) < 0.01
    # direct 2-D convolution with the outer-product kernel
    k = gaussian_kernel1d(2.0)
    k2 = np.outer(k, k)
    r = len(k) // 2
    ref = np.zeros((33, 33))
    ref[16 - r : 16 + r + 1, 16 - r : 16 + r + 1] = k2
    np.testing.assert_allclose(out[..., 0], ref, atol=1e-15)


def test_kernel_half_width():
    assert len(gaussian_kernel1d(0.5)) == 2 * 2 + 1
    assert len(gaussian_kernel1d(3.0)) == 2 * 9 + 1
    assert gaussian_kernel1d(1.3).sum() == pytest.approx(1.0, abs=1e-15)


def test_input_range_checked():
    with pytest.raises(InputError):
        degrade(np.full((8, 8, 3), 1.5))
    with pytest.raises(InputError):
        degrade(np.full((8, 8, 3), np.nan))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_parameters_in_ranges_and_output_bounded(seed):
    cfg = DegradeConfig(seed=seed)
    img = generate(RetinaSpec(size=32, seed=seed % 97))
    out, p = degrade(img, cfg)
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1
    il = p.illumination
    assert cfg.illum_gain[0] <= il.gain <= cfg.illum_gain[1]
    assert cfg.illum_bias[0] <= il.bias <= cfg.illum_bias[1]
    assert cfg.illum_sigma[0] * 32 <= il.sigma <= cfg.illum_sigma[1] * 32
    assert cfg.blur_sigma[0] <= p.blur.sigma <= cfg.blur_sigma[1]
    assert cfg.spots_count[0] <= len(p.spots) <= cfg.spots_count[1]
    for s in p.spots:
        assert cfg.spots_radius[0] * 32 <= s.radius <= cfg.spots_radius[1] * 32
        assert cfg.spots_brightness[0] <= s.brightness <= cfg.spots_brightness[1]


def test_config_and_record_text_roundtrip(image):
    cfg = DegradeConfig(seed=7, blur_enabled=False, spots_count=(2, 3), illum_gain=(0.5, 0.9))
    assert DegradeConfig.from_text(cfg.to_text()) == cfg
    _, applied = degrade(image, DegradeConfig(seed=7))
    assert Applied.from_text(applied.to_text()) == applied


def test_suite_names_and_substreams(image):
    suite = degrade_suite(image, 21)
    assert list(suite) == list(SUITE) and len(suite) == 6
    full = DegradeConfig(seed=21)
    no_spots, _ = degrade(image, full.only(("illumination", "blur")))
    assert no_spots.tobytes() == suite["illum-blur"][0].tobytes()
    assert suite["illum-blur-spots"][1].blur == suite["blur"][1].blur


def test_each_family_lowers_psnr():
    imgs = [generate(RetinaSpec(size=32, seed=s)) for s in range(50)]
    for name in ("illum", "blur", "spots"):
        values = [psnr(im, degrade_suite(im, 100 + k)[name][0]) for k, im in enumerate(imgs)]
        assert np.median(values) < np.inf
