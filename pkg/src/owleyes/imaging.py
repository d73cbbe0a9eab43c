"""Raster helpers: PNG/JPEG IO, bilinear resampling, rotation and Gaussian blur.

Rasters are uint8 arrays of shape (height, width, 3).
"""

import math
from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_png(img: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")
    return path


def _axis_weights(src: int, dst: int):
    # Half-pixel centres, edge samples clamped.
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize the first two axes of ``arr`` with bilinear interpolation.

    Works on (h, w) maps and (h, w, c) rasters; returns float64.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("cannot resize an empty array")
    y0, y1, fy = _axis_weights(arr.shape[0], height)
    x0, x1, fx = _axis_weights(arr.shape[1], width)
    extra = (1,) * (arr.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def rotate_cw(img: np.ndarray) -> np.ndarray:
    """Rotate 90 degrees clockwise."""
    return np.ascontiguousarray(np.rot90(img, k=-1, axes=(0, 1)))


def rotate_ccw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(img, k=1, axes=(0, 1)))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D kernel truncated at three standard deviations."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication; returns uint8."""
    if sigma <= 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = img.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        n = out.shape[axis]
        for i, wgt in enumerate(k):
            acc += wgt * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
