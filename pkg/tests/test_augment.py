import numpy as np
import pytest

from stylestroke import augment
from stylestroke import tensor as T
from stylestroke.augment import AugmentParams, apply, augment_batch, sample_params
from stylestroke.errors import ResampleDegenerateError
from stylestroke.tensor import Tensor

from .helpers import check_gradients

cv2 = pytest.importorskip("cv2")


def pattern(h=20, w=20, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(3, h, w))
    img[0, : h // 3, : w // 2] = 1.0  # break symmetry
    return img


def test_same_rng_state_same_params():
    a = sample_params(np.random.default_rng(5))
    b = sample_params(np.random.default_rng(5))
    assert a.crop_scale == b.crop_scale and a.crop_center == b.crop_center
    np.testing.assert_array_equal(a.corner_offsets, b.corner_offsets)


def test_sampled_ranges_over_many_draws():
    rng = np.random.default_rng(0)
    draws = [sample_params(rng) for _ in range(10_000)]
    scales = np.array([p.crop_scale for p in draws])
    assert scales.min() >= 0.7 and scales.max() <= 0.9
    # uniform on [0.7, 0.9]: mean 0.8, sd 0.2 / sqrt(12)
    assert abs(scales.mean() - 0.8) < 4 * 0.2 / np.sqrt(12) / np.sqrt(len(scales))
    for p in draws:
        cx, cy = p.crop_center
        s = p.crop_scale
        assert cx - s / 2 >= 0 and cx + s / 2 <= 1 and cy - s / 2 >= 0 and cy + s / 2 <= 1
    offsets = np.stack([p.corner_offsets for p in draws])
    assert np.abs(offsets).max() <= 0.25


def test_identity_params_return_input():
    img = pattern()
    out = apply(Tensor(img), AugmentParams.identity(20))
    np.testing.assert_allclose(out.data, img.astype(np.float32), atol=1e-6)


def test_crop_of_constant_image_is_constant():
    img = np.full((3, 16, 16), 0.37)
    p = AugmentParams((0.4, 0.6), 0.7, np.zeros((4, 2)), 24)
    np.testing.assert_allclose(apply(Tensor(img), p).data, 0.37, atol=1e-6)


def oracle_warp(img, p):
    """Per-pixel homography resample with OpenCV's homography and scalar bilinear lookups."""
    src = np.float32([[0, 0], [1, 0], [1, 1], [0, 1]])
    dst = (src + p.corner_offsets).astype(np.float32)
    warp = cv2.getPerspectiveTransform(src, dst).astype(np.float64)
    s, (cx, cy) = p.crop_scale, p.crop_center
    _, h, w = img.shape
    size = p.output_size
    out = np.zeros((3, size, size))
    for i in range(size):
        for j in range(size):
            u, v = (j + 0.5) / size, (i + 0.5) / size
            x, y, z = warp @ [u, v, 1.0]
            x, y = x / z, y / z
            x, y = cx - s / 2 + s * x, cy - s / 2 + s * y
            px = min(max(x * w - 0.5, 0.0), w - 1.0)
            py = min(max(y * h - 0.5, 0.0), h - 1.0)
            xa, ya = int(np.floor(px)), int(np.floor(py))
            xb, yb = min(xa + 1, w - 1), min(ya + 1, h - 1)
            fx, fy = px - xa, py - ya
            out[:, i, j] = ((1 - fx) * (1 - fy) * img[:, ya, xa] + fx * (1 - fy) * img[:, ya, xb]
                            + (1 - fx) * fy * img[:, yb, xa] + fx * fy * img[:, yb, xb])
    return out


@pytest.mark.parametrize("d", [0.1, 0.2])
def test_pinwheel_displacement_matches_oracle(d):
    offsets = np.array([[d, 0.0], [0.0, d], [-d, 0.0], [0.0, -d]])
    p = AugmentParams((0.45, 0.55), 0.8, offsets, 18)
    img = pattern(22, 26)
    with T.default_dtype(np.float64):
        got = apply(Tensor(img), p).data
    np.testing.assert_allclose(got, oracle_warp(img, p), atol=1e-4)


def test_random_params_match_oracle():
    rng = np.random.default_rng(11)
    img = pattern(15, 15, seed=2)
    for _ in range(3):
        p = sample_params(rng, output_size=12)
        with T.default_dtype(np.float64):
            got = apply(Tensor(img), p).data
        np.testing.assert_allclose(got, oracle_warp(img, p), atol=1e-4)


def test_degenerate_corner_layout_raises():
    # swap the two right-hand corners: a bow-tie quadrilateral
    offsets = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]])
    with pytest.raises(ResampleDegenerateError):
        apply(Tensor(pattern()), AugmentParams((0.5, 0.5), 1.0, offsets, 8))


def test_output_stays_within_input_range():
    rng = np.random.default_rng(3)
    img = pattern(16, 16)
    views = augment_batch(Tensor(img), 6, rng, output_size=16).data
    assert views.min() >= img.min() - 1e-6 and views.max() <= img.max() + 1e-6


def test_batch_determinism_and_shape():
    img = Tensor(pattern())
    a = augment_batch(img, 4, np.random.default_rng(9), output_size=10).data
    b = augment_batch(img, 4, np.random.default_rng(9), output_size=10).data
    assert a.shape == (4, 3, 10, 10)
    np.testing.assert_array_equal(a, b)
    assert augment.DEFAULT_VIEWS == 4


def test_single_identity_view_is_input():
    img = pattern(12, 12)
    out = augment_batch(Tensor(img), 1, params=[AugmentParams.identity(12)]).data
    np.testing.assert_allclose(out[0], img.astype(np.float32), atol=1e-6)


def test_gradient_flows_to_source_image():
    img = pattern(10, 10)
    params = [sample_params(np.random.default_rng(1), output_size=8) for _ in range(2)]
    weights = np.random.default_rng(2).normal(size=(2, 3, 8, 8))
    with T.default_dtype(np.float64):
        x = Tensor(img, requires_grad=True)
        g = T.backward(augment_batch(x, params=params).mean(), inputs=[x])[x]
    assert np.abs(g).sum() > 0
    err = check_gradients(lambda x: (augment_batch(x, params=params) * weights).mean(), [img], samples=60)
    assert err < 1e-3
