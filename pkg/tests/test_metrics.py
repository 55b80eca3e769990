import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from skimage import data
from skimage.metrics import structural_similarity

from instarepaint.backends.mocks import LossyCodec
from instarepaint.errors import DimensionError
from instarepaint.metrics import DegradationCurve, format_db, psnr, roundtrip_degradation, ssim
from instarepaint.raster import luminance


def test_psnr_examples():
    a = np.full((4, 4, 3), 10, np.uint8)
    b = np.full((4, 4, 3), 20, np.uint8)
    assert psnr(a, b) == pytest.approx(28.1308, abs=1e-4)
    assert psnr(np.zeros((2, 2), np.uint8), np.full((2, 2), 255, np.uint8)) == pytest.approx(0.0)
    assert psnr(a, a) == math.inf and format_db(math.inf) == "inf"
    region = np.zeros((4, 4), bool)
    region[0, 0] = True
    c = a.copy()
    c[1:, :] = 0
    assert psnr(a, c, region) == math.inf
    with pytest.raises(DimensionError):
        psnr(a, b[:2])


@given(arrays(np.uint8, (4, 5, 3)), arrays(np.uint8, (4, 5, 3)))
def test_psnr_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)


def test_ssim_examples(rng):
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    assert ssim(img, img) == 1.0
    checker = ((np.indices((16, 16)).sum(0) % 2) * 255).astype(np.uint8)
    assert ssim(checker, 255 - checker) < 0
    with pytest.raises(DimensionError):
        ssim(np.zeros((10, 40), np.uint8), np.zeros((10, 40), np.uint8))


def test_ssim_decreases_with_noise():
    img = data.camera()[::4, ::4]
    noise = np.random.default_rng(3).standard_normal(img.shape)
    scores = [ssim(img, np.clip(img + s * noise, 0, 255).astype(np.uint8)) for s in (2, 8, 32, 64)]
    assert all(x > y for x, y in zip(scores, scores[1:]))


@pytest.mark.parametrize("name", ["astronaut", "chelsea", "coffee"])
def test_ssim_matches_reference(name):
    img = getattr(data, name)()[:96, :96]
    other = LossyCodec().roundtrip(img)
    ref = structural_similarity(luminance(img), luminance(other), data_range=255, gaussian_weights=True,
                                sigma=1.5, use_sample_covariance=False)
    assert ssim(img, other) == pytest.approx(ref, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(arrays(np.uint8, (12, 12)), arrays(np.uint8, (12, 12)))
def test_ssim_bounded_and_symmetric(a, b):
    s = ssim(a, b)
    assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9
    assert s == pytest.approx(ssim(b, a), abs=1e-12)


def test_degradation_curve():
    img = data.astronaut()[:128, :128]
    curve = roundtrip_degradation(img, LossyCodec(), 10)
    assert [s[0] for s in curve.steps] == list(range(1, 11))
    assert all(x > y for x, y in zip(curve.psnr, curve.psnr[1:]))
    assert all(x >= y for x, y in zip(curve.ssim, curve.ssim[1:]))
    lines = curve.to_csv().splitlines()
    assert lines[0] == "step,psnr_db,ssim" and len(lines) == 11
    with pytest.raises(ValueError):
        roundtrip_degradation(img, LossyCodec(), 0)
    with pytest.raises(ValueError):
        DegradationCurve([(2, 1.0, 1.0)])
