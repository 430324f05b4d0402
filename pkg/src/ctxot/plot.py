"""Minimal raster line charts written as PPM, with no plotting dependency."""

from __future__ import annotations

import numpy as np

from .fileio import write_ppm

__all__ = ["line_chart", "save_line_chart"]

COLOURS = [(0.84, 0.15, 0.16), (0.12, 0.47, 0.71), (0.17, 0.63, 0.17), (0.58, 0.40, 0.74)]


def _line(canvas, p0, p1, colour, thickness=1):
    (y0, x0), (y1, x1) = p0, p1
    n = int(max(abs(y1 - y0), abs(x1 - x0))) + 1
    ys = np.rint(np.linspace(y0, y1, n)).astype(int)
    xs = np.rint(np.linspace(x0, x1, n)).astype(int)
    h, w = canvas.shape[:2]
    for dy in range(-(thickness // 2), thickness // 2 + 1):
        for dx in range(-(thickness // 2), thickness // 2 + 1):
            yy, xx = np.clip(ys + dy, 0, h - 1), np.clip(xs + dx, 0, w - 1)
            canvas[yy, xx] = colour


def _marker(canvas, centre, colour, r=3):
    h, w = canvas.shape[:2]
    y, x = int(round(centre[0])), int(round(centre[1]))
    canvas[max(0, y - r) : min(h, y + r + 1), max(0, x - r) : min(w, x + r + 1)] = colour


def line_chart(xs, series: list, width: int = 480, height: int = 320, margin: int = 32) -> np.ndarray:
    """Draw each series (rescaled to its own min/max) against shared ``xs``.

    Returns an ``height x width x 3`` image; series are coloured in order
    red, blue, green, purple.  Light grid lines mark every x position.
    """
    xs = np.asarray(xs, dtype=np.float64)
    canvas = np.ones((height, width, 3))
    left, right = margin, width - margin
    top, bottom = margin, height - margin
    span = xs.max() - xs.min() if xs.size > 1 else 1.0
    px = left + (xs - xs.min()) / (span or 1.0) * (right - left)
    for x in px:
        _line(canvas, (top, x), (bottom, x), (0.9, 0.9, 0.9))
    for frac in (0.0, 0.5, 1.0):
        y = bottom - frac * (bottom - top)
        _line(canvas, (y, left), (y, right), (0.9, 0.9, 0.9))
    _line(canvas, (bottom, left), (bottom, right), (0.0, 0.0, 0.0))
    _line(canvas, (top, left), (bottom, left), (0.0, 0.0, 0.0))
    for k, ys in enumerate(series):
        ys = np.asarray(ys, dtype=np.float64)
        finite = ys[np.isfinite(ys)]
        lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
        norm = (ys - lo) / (hi - lo) if hi > lo else np.full_like(ys, 0.5)
        py = bottom - np.nan_to_num(norm, nan=0.0, posinf=1.0, neginf=0.0) * (bottom - top)
        colour = COLOURS[k % len(COLOURS)]
        for i in range(len(xs) - 1):
            _line(canvas, (py[i], px[i]), (py[i + 1], px[i + 1]), colour, thickness=2)
        for i in range(len(xs)):
            _marker(canvas, (py[i], px[i]), colour)
    return canvas


def save_line_chart(path, xs, series: list, **kw) -> None:
    write_ppm(path, line_chart(xs, series, **kw))
