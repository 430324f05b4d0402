"""PSNR and SSIM for images in ``[0, 1]``.

SSIM follows the usual reference settings: luminance only (BT.601
weights), an 11x11 Gaussian window with sigma 1.5, ``K1 = 0.01``,
``K2 = 0.03``, dynamic range 1, averaged over the valid window positions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .autodiff import DimensionError
from .fileio import atomic_write_bytes

__all__ = ["psnr", "ssim", "MetricRow", "MetricReport", "gaussian_window", "to_gray"]

LUMA = np.array([0.299, 0.587, 0.114])
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA
    if img.ndim == 2:
        return img
    raise DimensionError(f"expected H x W or H x W x 3, got {img.shape}")


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = w.shape[0] // 2
    full = ndimage.correlate(x, w, mode="constant")
    return full[r : x.shape[0] - r, r : x.shape[1] - r]


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity over all valid 11x11 windows."""
    a, b = _pair(a, b)
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < WINDOW:
        raise DimensionError(f"image {x.shape} is smaller than the {WINDOW}x{WINDOW} SSIM window")
    w = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricRow:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    @classmethod
    def evaluate(cls, pairs) -> "MetricReport":
        """Build a report from ``(name, reference, test)`` triples."""
        rows = [MetricRow(name, psnr(ref, test), ssim(ref, test)) for name, ref, test in pairs]
        return cls(sorted(rows, key=lambda r: r.name))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    @property
    def std_psnr(self) -> float:
        vals = np.array([r.psnr_db for r in self.rows])
        return math.nan if np.isinf(vals).any() else float(np.std(vals))

    @property
    def std_ssim(self) -> float:
        return float(np.std([r.ssim for r in self.rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "psnr_db", "ssim"])
        for r in self.rows:
            writer.writerow([r.name, _fmt(r.psnr_db), _fmt(r.ssim)])
        writer.writerow(["AGGREGATE", _fmt(self.mean_psnr), _fmt(self.mean_ssim)])
        return buf.getvalue()

    def write(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("utf-8"))

    @classmethod
    def read(cls, path) -> "MetricReport":
        with open(path, newline="") as fh:
            rows = [
                MetricRow(rec["name"], float(rec["psnr_db"]), float(rec["ssim"]))
                for rec in csv.DictReader(fh)
                if rec["name"] != "AGGREGATE"
            ]
        return cls(rows)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))
