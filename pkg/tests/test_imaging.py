import math

import numpy as np
import pytest

from owleyes.imaging import bilinear_resize, gaussian_blur, gaussian_kernel, load_image, rotate_ccw, rotate_cw, save_png


def test_kernel_radius_and_mass():
    k = gaussian_kernel(1.28)
    assert len(k) == 2 * 4 + 1
    assert k.sum() == pytest.approx(1.0)
    assert np.array_equal(k, k[::-1])


@pytest.mark.parametrize("sigma", [0.8, 1.28, 1.92, 3.0])
def test_blur_matches_scipy(sigma):
    ndimage = pytest.importorskip("scipy.ndimage")
    img = np.random.default_rng(int(sigma * 100)).integers(0, 256, (60, 45, 3), dtype=np.uint8)
    radius = math.ceil(3 * sigma)
    ref = np.stack([
        ndimage.gaussian_filter(img[..., c].astype(np.float64), sigma, mode="nearest", truncate=radius / sigma)
        for c in range(3)], axis=-1)
    ours = gaussian_blur(img, sigma).astype(np.int64)
    ref = np.clip(np.rint(ref), 0, 255).astype(np.int64)
    # Only values sitting on a .5 rounding boundary may differ.
    assert np.abs(ours - ref).max() <= 1
    assert np.mean(ours == ref) > 0.999


@pytest.mark.parametrize("shape,size", [((7, 5), (13, 9)), ((40, 30), (16, 12)), ((3, 2), (192, 128)), ((9, 9), (9, 4))])
def test_resize_matches_opencv(shape, size):
    cv2 = pytest.importorskip("cv2")
    arr = np.random.default_rng(0).uniform(0, 1, shape).astype(np.float32)
    ref = cv2.resize(arr, (size[1], size[0]), interpolation=cv2.INTER_LINEAR)
    assert np.allclose(bilinear_resize(arr, *size), ref, atol=1e-5)


def test_resize_identity_and_constant():
    a = np.random.default_rng(1).uniform(size=(6, 4, 3))
    assert np.allclose(bilinear_resize(a, 6, 4), a)
    assert np.allclose(bilinear_resize(np.full((5, 3), 2.5), 11, 7), 2.5)


def test_rotations_are_inverse():
    img = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    assert rotate_cw(img).shape == (4, 2, 3)
    assert np.array_equal(rotate_ccw(rotate_cw(img)), img)
    assert np.array_equal(rotate_cw(img)[0, -1], img[0, 0])


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (10, 7, 3), dtype=np.uint8)
    assert np.array_equal(load_image(save_png(img, tmp_path / "x" / "a.png")), img)
