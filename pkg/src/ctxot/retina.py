"""Procedural fundus-like images so the pipeline runs without external data."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes, write_ppm

__all__ = ["RetinaSpec", "RetinaRecord", "generate", "generate_with_record", "generate_dataset", "fov_mask"]


@dataclass(frozen=True)
class RetinaSpec:
    size: int = 256
    seed: int = 0
    depth: int = 5
    vessel_width: float = 0.035
    disc_radius: float = 0.09
    tint: tuple[float, float, float] = (0.86, 0.42, 0.20)
    fov: float = 0.48

    def __post_init__(self):
        if self.size < 32 or self.size & (self.size - 1):
            raise ValueError(f"size must be a power of two >= 32, got {self.size}")
        if self.depth < 1:
            raise ValueError("vessel depth must be >= 1")
        if not 0 < self.fov <= 0.5:
            raise ValueError("field-of-view fraction must lie in (0, 0.5]")


@dataclass
class RetinaRecord:
    """Side products of generation: vessel centerlines and the vessel-free image."""

    centerline: np.ndarray  # (K, 2) row/col points
    background: np.ndarray
    disc_center: tuple[float, float]
    segments: list = field(default_factory=list)


def fov_mask(size: int, fov: float = 0.48) -> np.ndarray:
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    return np.hypot(yy - c, xx - c) <= fov * size


def _grow(rng, start, heading, level, depth, size, radius, centre, out):
    if level >= depth:
        return
    steps = 6 - min(level, 3)
    step = size * 0.045
    width = 0.7**level
    pts = [start]
    pos = np.array(start, dtype=np.float64)
    for _ in range(steps):
        heading += rng.normal(0.0, 0.22)
        nxt = pos + step * np.array([math.sin(heading), math.cos(heading)])
        if np.hypot(*(nxt - centre)) > radius:
            break
        pos = nxt
        pts.append(tuple(pos))
    if len(pts) < 2:
        return
    out.append((np.array(pts), width))
    spread = rng.uniform(0.35, 0.7)
    for sign in (-1.0, 1.0):
        _grow(rng, tuple(pos), heading + sign * spread, level + 1, depth, size, radius, centre, out)


def _segment_alpha(alpha, p0, p1, sigma, opacity):
    size = alpha.shape[0]
    reach = 3.0 * sigma + 1.0
    lo = np.floor(np.minimum(p0, p1) - reach).astype(int).clip(0, size - 1)
    hi = np.ceil(np.maximum(p0, p1) + reach).astype(int).clip(0, size - 1)
    yy, xx = np.mgrid[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1]
    d = p1 - p0
    denom = float(d @ d) or 1.0
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / denom, 0.0, 1.0)
    dist2 = (yy - (p0[0] + t * d[0])) ** 2 + (xx - (p0[1] + t * d[1])) ** 2
    local = opacity * np.exp(-dist2 / (2.0 * sigma * sigma))
    view = alpha[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1]
    np.maximum(view, local, out=view)


def generate_with_record(spec: RetinaSpec) -> tuple[np.ndarray, RetinaRecord]:
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    c = (n - 1) / 2.0
    radius = spec.fov * n
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    r = np.hypot(yy - c, xx - c) / radius
    mask = r <= 1.0

    tint = np.asarray(spec.tint)
    shade = 1.0 - 0.45 * r**2 + 0.05 * rng.uniform(-1, 1) * (yy - c) / radius
    img = tint[None, None, :] * shade[..., None]

    side = rng.choice([-1.0, 1.0])
    disc = (c + rng.uniform(-0.12, 0.12) * radius, c + side * rng.uniform(0.35, 0.5) * radius)
    rd = spec.disc_radius * n
    blob = np.exp(-((yy - disc[0]) ** 2 + (xx - disc[1]) ** 2) / (2.0 * (rd / 1.6) ** 2))
    disc_colour = np.array([1.0, 0.86, 0.58])
    img = img * (1 - blob[..., None]) + disc_colour * blob[..., None]
    background = np.where(mask[..., None], img, 0.0).clip(0.0, 1.0)

    segments: list = []
    centre = np.array([c, c])
    toward = math.atan2(0.0, -side)  # trunks head across the field, away from the disc side
    for k in range(4):
        heading = toward + (-1.1, -0.45, 0.45, 1.1)[k] + rng.normal(0.0, 0.1)
        _grow(rng, disc, heading, 0, spec.depth, n, radius * 0.98, centre, segments)

    alpha = np.zeros((n, n))
    base = spec.vessel_width * n
    for pts, width in segments:
        sigma = max(base * width / 2.0, 0.35)
        for p0, p1 in zip(pts[:-1], pts[1:]):
            _segment_alpha(alpha, p0, p1, sigma, 0.85)
    vessel_colour = tint * np.array([0.62, 0.26, 0.30])
    vessel = vessel_colour[None, None, :] * shade[..., None]
    img = img * (1 - alpha[..., None]) + vessel * alpha[..., None]
    img = np.where(mask[..., None], img, 0.0).clip(0.0, 1.0)

    points = np.concatenate([pts for pts, _ in segments]) if segments else np.zeros((0, 2))
    return img, RetinaRecord(points, background, disc, segments)


def generate(spec: RetinaSpec) -> np.ndarray:
    """Render one ``size x size x 3`` fundus-like image in ``[0, 1]``."""
    return generate_with_record(spec)[0]


def generate_dataset(count: int, template: RetinaSpec, out_dir, prefix: str = "retina") -> list[tuple[str, int]]:
    """Write ``count`` images with seeds ``template.seed + k`` and a ``manifest.csv``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(count):
        seed = template.seed + k
        name = f"{prefix}_{seed:06d}.ppm"
        write_ppm(out / name, generate(replace(template, seed=seed)))
        rows.append((name, seed))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "seed"])
    writer.writerows(rows)
    atomic_write_bytes(out / "manifest.csv", buf.getvalue().encode("ascii"))
    return rows
