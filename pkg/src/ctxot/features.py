"""Fixed-filter feature pyramid and the binary feature-file format.

The encoder is a stack of stride-2 convolutions with seeded, orthonormal
filters and leaky-ReLU activations.  It has no bias terms, so it is
positively homogeneous: scaling an image by ``c > 0`` scales every feature
vector by ``c`` and leaves the unit-normalised set unchanged.

Feature file layout (little-endian)::

    b"CTXF" | uint32 N | uint32 D | N*D float32, row-major
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .fileio import FormatError, atomic_write_bytes
from .transport import FeatureSet

__all__ = ["EncoderSpec", "encode", "encode_batch", "write_features", "read_features", "FEATURE_MAGIC"]

FEATURE_MAGIC = b"CTXF"
NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncoderSpec:
    stages: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    alpha: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != self.stages:
            raise ValueError(f"need one channel count per stage, got {self.channels} for {self.stages} stages")
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be positive")

    @property
    def reduction(self) -> int:
        return self.stride**self.stages

    @property
    def dim(self) -> int:
        return self.channels[-1]

    def filters(self) -> tuple[np.ndarray, ...]:
        return _filters(self)


def _orthonormal_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    blocks = []
    remaining = rows
    while remaining > 0:
        take = min(remaining, cols)
        q, r = np.linalg.qr(rng.standard_normal((cols, take)))
        # fix column signs so the factorisation is unique
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        blocks.append(q.T)
        remaining -= take
    return np.concatenate(blocks, axis=0)


@functools.lru_cache(maxsize=16)
def _filters(spec: EncoderSpec) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng(spec.seed)
    cin = 3
    out = []
    for cout in spec.channels:
        rows = _orthonormal_rows(rng, cout, cin * spec.kernel * spec.kernel)
        w = rows.reshape(cout, cin, spec.kernel, spec.kernel)
        w.flags.writeable = False
        out.append(w)
        cin = cout
    return tuple(out)


def encode_batch(x: Tensor, spec: EncoderSpec = EncoderSpec()) -> list[FeatureSet]:
    """Encode a ``[B, 3, H, W]`` batch into one unit-normalised set per image.

    Gradients flow back to ``x``; the filters are constants.
    """
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"encoder expects [B,3,H,W], got {x.shape}")
    b, _, h, w = x.shape
    r = spec.reduction
    if h % r or w % r:
        raise DimensionError(f"image {h}x{w} is not divisible by the encoder reduction {r}")
    feat = x
    for kernel in spec.filters():
        feat = ad.leaky_relu(ad.conv2d(feat, kernel, stride=spec.stride, padding=spec.kernel // 2), spec.alpha)
    d, hh, ww = feat.shape[1:]
    vecs = ad.reshape(ad.transpose(feat, (0, 2, 3, 1)), (b, hh * ww, d))
    sq = ad.sum(ad.square(vecs), axis=2, keepdims=True)
    # the inner eps keeps the sqrt derivative finite on dead activations
    norm = ad.add(ad.sqrt(sq, NORM_EPS * NORM_EPS), NORM_EPS)
    unit = ad.div(vecs, ad.broadcast_to(norm, vecs.shape))
    return [FeatureSet(ad.reshape(ad.slice_axis(unit, i, i + 1, 0), (hh * ww, d)), tol=None) for i in range(b)]


def encode(image, spec: EncoderSpec = EncoderSpec()) -> FeatureSet:
    """Encode one ``H x W x 3`` image (array or tensor)."""
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64))
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {img.shape}")
    x = ad.reshape(ad.transpose(img, (2, 0, 1)), (1, 3) + img.shape[:2])
    return encode_batch(x, spec)[0]


def write_features(path, fs: FeatureSet) -> None:
    arr = fs.array if isinstance(fs, FeatureSet) else np.asarray(fs, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"feature set must be N x D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("feature values must be finite")
    n, d = arr.shape
    payload = FEATURE_MAGIC + struct.pack("<II", n, d) + arr.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def read_features(path) -> FeatureSet:
    """Read a feature file; values come back exactly as stored (float32 precision).

    Rows are not renormalised and the unit-norm check is skipped, so a
    written set reads back bit-for-bit and externally produced features
    are used as given.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: file too short for a feature header")
    if raw[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    n, d = struct.unpack("<II", raw[4:12])
    if n < 1 or d < 1:
        raise FormatError(f"{path}: declared shape {n}x{d} is empty")
    body = raw[12:]
    if len(body) != 4 * n * d:
        raise FormatError(f"{path}: truncated payload, declared {n}x{d} needs {4 * n * d} bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(n, d)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite feature values")
    return FeatureSet(Tensor(arr), tol=None)
