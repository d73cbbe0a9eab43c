"""Grad-CAM localization of detected issues.

The class score is back-propagated to the final conv-block activations A^k;
the spatial mean of each channel's gradient gives that channel's weight, and
ReLU(sum_k weight_k * A^k) upsampled to the screenshot is the heatmap.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from owleyes.imaging import bilinear_resize, rotate_ccw
from owleyes.model import BUG, preprocess_image


@dataclass
class Heatmap:
    values: np.ndarray  # (h, w) in [0, 1]
    zero_saliency: bool = False

    @property
    def dims(self):
        return self.values.shape

    def to_json(self) -> str:
        h, w = self.values.shape
        return json.dumps({"dims": [h, w], "zero_saliency": self.zero_saliency,
                           "values": [round(float(v), 6) for v in self.values.ravel()]})

    def dump(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass(frozen=True)
class Region:
    left: int = 0
    top: int = 0
    right: int = 0
    bottom: int = 0
    empty: bool = True

    def as_tuple(self):
        return (self.left, self.top, self.right, self.bottom)

    def to_list(self):
        return None if self.empty else list(self.as_tuple())

    def contains(self, x, y):
        return not self.empty and self.left <= x < self.right and self.top <= y < self.bottom


def cam_weights(grad_features: np.ndarray) -> np.ndarray:
    """Channel weights: spatial mean of d score / d A^k.  Input (K, h, w)."""
    return grad_features.mean(axis=(1, 2))


def class_activation_map(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """ReLU(sum_k weights[k] * features[k]) for features (K, h, w)."""
    return np.maximum(np.tensordot(weights, features, axes=1), 0)


def normalize_map(raw: np.ndarray) -> Heatmap:
    peak = float(raw.max()) if raw.size else 0.0
    if peak > 0:
        return Heatmap(values=np.clip(raw / peak, 0.0, 1.0))
    return Heatmap(values=np.zeros_like(raw, dtype=np.float64), zero_saliency=True)


def grad_cam(model, img: np.ndarray, target: int = BUG) -> Heatmap:
    """Heatmap over ``img`` (same height and width) for class ``target``.

    ``model`` needs ``config.height``/``config.width``, ``feature_maps(batch)``
    and ``score_gradient(features, target)``.
    """
    n_classes = 2
    if not 0 <= int(target) < n_classes:
        raise ValueError(f"target must be in [0, {n_classes}), got {target}")
    x = preprocess_image(img, model.config.height, model.config.width, getattr(model, "dtype", np.float64))
    feats = model.feature_maps(x)
    grads = model.score_gradient(feats, int(target))
    raw = class_activation_map(feats[0].astype(np.float64), cam_weights(grads[0].astype(np.float64)))

    h, w = img.shape[:2]
    rotated = w > h
    up_h, up_w = (w, h) if rotated else (h, w)
    up = bilinear_resize(raw, up_h, up_w) if raw.size else np.zeros((up_h, up_w))
    if rotated:
        up = rotate_ccw(up)
    return normalize_map(np.maximum(up, 0))


def heatmap_to_region(hm: Heatmap, threshold: float = 0.5) -> Region:
    """Tight box (exclusive right/bottom) around cells with value >= threshold."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    ys, xs = np.nonzero(hm.values >= threshold)
    if ys.size == 0:
        return Region()
    return Region(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1, empty=False)


def heatmap_peak(hm: Heatmap):
    """(x, y) of the heatmap maximum; a tied plateau resolves to its box centre."""
    v = hm.values
    ys, xs = np.nonzero(v == v.max())
    return (int(xs.min() + xs.max()) // 2, int(ys.min() + ys.max()) // 2)


# Piecewise-linear blue -> cyan -> green -> yellow -> red.
COLORMAP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
COLORMAP_RGB = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)


def colormap(values: np.ndarray) -> np.ndarray:
    v = np.clip(values, 0, 1)
    rgb = np.stack([np.interp(v, COLORMAP_STOPS, COLORMAP_RGB[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def render_overlay(img: np.ndarray, hm: Heatmap, alpha: float = 0.4) -> np.ndarray:
    if img.shape[:2] != hm.values.shape:
        raise ValueError(f"heatmap {hm.values.shape} does not match image {img.shape[:2]}")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0:
        return img.copy()
    cm = colormap(hm.values)
    if alpha == 1:
        return cm
    out = (1 - alpha) * img[..., :3].astype(np.float64) + alpha * cm.astype(np.float64)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
