import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egogesture.core import AnnotatedSample, BoundingBox, FingertipSet, GestureCode, validate_sample
from egogesture.training.augment import (AugmentConfig, affine_matrix, apply_affine, augment, crop_center,
                                         photometric, transform_points)


def _marker_sample(W=64):
    img = np.zeros((W, W, 3), np.uint8)
    img[20, 40] = 255
    tips = FingertipSet([(40.0, 20.0), (30.0, 30.0), None, None, None])
    return AnnotatedSample(img, BoundingBox(0, 0, W, W), "X", GestureCode.of([1, 1, 0, 0, 0]), tips)


def test_translation_shifts_fingertips_exactly(synthetic8):
    s = synthetic8[0]
    out = apply_affine(s, affine_matrix(translation=(10, 5)))
    for a, b in zip(s.fingertips.coords, out.fingertips.coords):
        if a is not None:
            assert b == (a[0] + 10, a[1] + 5)
    assert out.bbox.x_tl == s.bbox.x_tl + 10 and out.bbox.y_br == min(s.bbox.y_br + 5, 480)


def test_identity_with_noise_disabled(synthetic8, rng):
    cfg = AugmentConfig(rotation_deg=0, translate_frac=0, shear_deg=0, scale_range=(1, 1), crop_frac=0,
                        photometric=False)
    s = synthetic8[1]
    assert augment(s, rng, cfg) == s
    assert augment(s, rng, AugmentConfig.disabled()) == s


def test_rotation_90_about_crop_centre():
    W = 64
    m = affine_matrix(rotation_deg=90, center=crop_center(BoundingBox(0, 0, W, W)))
    x, y = 40.0, 20.0
    assert np.allclose(transform_points(m, [[x, y]])[0], [W - 1 - y, x], atol=1e-9)


def test_rotation_moves_pixels_with_points():
    s = _marker_sample()
    m = affine_matrix(rotation_deg=90, center=crop_center(s.bbox))
    out = apply_affine(s, m)
    x, y = out.fingertips[0]
    ys, xs = np.nonzero(out.image[..., 0])
    assert (round(x), round(y)) == (int(xs.mean()), int(ys.mean()))


def test_scale_about_centre_keeps_centre():
    c = (31.5, 31.5)
    m = affine_matrix(scale=1.3, center=c)
    assert np.allclose(transform_points(m, [c])[0], c)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_augmented_samples_stay_valid(seed):
    from egogesture.dataio import SyntheticConfig, render_sample
    cfg = SyntheticConfig(seed=seed)
    rng = np.random.default_rng(seed)
    s = render_sample(cfg, rng, cfg.registry.names[seed % 8])
    out = augment(s, np.random.default_rng(seed + 1))
    assert validate_sample(out) == []
    assert out.code == s.code and out.image.shape == s.image.shape


def test_augment_is_deterministic_per_rng(synthetic8):
    a = augment(synthetic8[2], np.random.default_rng(4))
    b = augment(synthetic8[2], np.random.default_rng(4))
    assert a == b


def test_photometric_keeps_range(rng):
    img = rng.integers(0, 256, (20, 20, 3), dtype=np.uint8)
    out = photometric(img, rng, AugmentConfig())
    assert out.dtype == np.uint8 and out.shape == img.shape
