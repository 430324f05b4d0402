"""Small geometric helpers for HWC float images."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = ["resize", "center_crop_resize", "augment"]


def resize(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment."""
    width = height if width is None else width
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack(
        [ndimage.map_coordinates(img[..., c], [yy, xx], order=1, mode="nearest") for c in range(img.shape[2])],
        axis=-1,
    )
    return np.clip(out, 0.0, 1.0)


def center_crop_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Crop the central square and resize it to ``size x size``."""
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return resize(img[top : top + s, left : left + s], size)


def augment(img: np.ndarray, rng: np.random.Generator, scale=(0.8, 1.0)) -> np.ndarray:
    """Random flips, a quarter-turn rotation and a crop-and-resize."""
    out = img
    if rng.random() < 0.5:
        out = out[:, ::-1]
    if rng.random() < 0.5:
        out = out[::-1, :]
    out = np.rot90(out, int(rng.integers(0, 4)))
    size = out.shape[0]
    side = max(1, int(round(rng.uniform(*scale) * size)))
    top = int(rng.integers(0, size - side + 1))
    left = int(rng.integers(0, size - side + 1))
    return resize(np.ascontiguousarray(out[top : top + side, left : left + side]), size)
