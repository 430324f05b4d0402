"""File formats shared across the package.

* binary portable pixmap (P6, maxval 255) for images,
* flat ``key = value`` text with ``#`` comments for configs and sidecars,
* atomic writes (temp file then rename).
"""

from __future__ import annotations

import configparser
import hashlib
import os
import re
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "FormatError",
    "read_ppm",
    "write_ppm",
    "ppm_bytes",
    "parse_keyvalue",
    "format_keyvalue",
    "atomic_write_bytes",
    "sha256_file",
    "sha256_bytes",
]


class FormatError(ValueError):
    """Raised when a file does not match its declared binary or text layout."""


_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def ppm_bytes(image: np.ndarray) -> bytes:
    """Encode an ``H x W x 3`` image in ``[0, 1]`` as 8-bit P6 bytes."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + q.tobytes()


def write_ppm(path, image: np.ndarray) -> None:
    atomic_write_bytes(path, ppm_bytes(image))


def read_ppm(path) -> np.ndarray:
    """Decode a P6 file into a float64 ``H x W x 3`` image in ``[0, 1]``."""
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PPM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PPM header") from exc
    if maxval != 255 or width < 1 or height < 1:
        raise FormatError(f"{path}: unsupported PPM geometry {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    payload = raw[pos : pos + width * height * 3]
    if len(payload) != width * height * 3:
        raise FormatError(f"{path}: PPM raster truncated")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / 255.0


def parse_keyvalue(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), delimiters=("=",), interpolation=None
    )
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise FormatError(f"malformed key = value text: {exc}") from exc
    return dict(parser["root"])


def format_keyvalue(items: dict, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in items.items()]
    return "\n".join(lines) + "\n"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())
