"""Seeded synthesis of low-quality fundus images.

Three degradation families, applied in a fixed order:

1. illumination: ``clip(gain * x * halo + bias)`` where ``halo`` is a
   unit-peak Gaussian centred near the image centre;
2. blur: separable Gaussian with half-width ``ceil(3 sigma)``;
3. spots: additive Gaussian light spots, ``b * exp(-d^2 / (2 (r/2)^2))``.

Each family draws from its own random stream derived from
``(seed, family)``, so switching one family off never changes what the
others sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .fileio import FormatError, format_keyvalue, parse_keyvalue

__all__ = [
    "InputError",
    "DegradeConfig",
    "Illumination",
    "Blur",
    "Spot",
    "Applied",
    "degrade",
    "degrade_suite",
    "SUITE",
    "gaussian_kernel1d",
]

FAMILY_TAGS = {"illumination": 1, "blur": 2, "spots": 3}

SUITE = {
    "illum": ("illumination",),
    "blur": ("blur",),
    "spots": ("spots",),
    "illum-blur": ("illumination", "blur"),
    "illum-spots": ("illumination", "spots"),
    "illum-blur-spots": ("illumination", "blur", "spots"),
}


class InputError(ValueError):
    """Raised for images outside ``[0, 1]`` or with the wrong layout."""


def _range(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class DegradeConfig:
    seed: int = 0
    illum_enabled: bool = True
    illum_gain: tuple[float, float] = (0.4, 1.1)
    illum_bias: tuple[float, float] = (-0.15, 0.15)
    illum_jitter: float = 0.25
    illum_sigma: tuple[float, float] = (0.3, 0.7)
    blur_enabled: bool = True
    blur_sigma: tuple[float, float] = (0.5, 3.0)
    spots_enabled: bool = True
    spots_count: tuple[int, int] = (1, 5)
    spots_radius: tuple[float, float] = (0.05, 0.15)
    spots_brightness: tuple[float, float] = (0.3, 0.9)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and not v[0] <= v[1]:
                raise ValueError(f"{f.name}: empty range {v}")

    def families(self) -> tuple[str, ...]:
        on = []
        if self.illum_enabled:
            on.append("illumination")
        if self.blur_enabled:
            on.append("blur")
        if self.spots_enabled:
            on.append("spots")
        return tuple(on)

    def only(self, families) -> "DegradeConfig":
        families = set(families)
        return replace(
            self,
            illum_enabled="illumination" in families,
            blur_enabled="blur" in families,
            spots_enabled="spots" in families,
        )

    def to_text(self) -> str:
        items = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                items[f.name] = f"{_num(v[0])}, {_num(v[1])}"
            elif isinstance(v, bool):
                items[f.name] = "true" if v else "false"
            else:
                items[f.name] = _num(v)
        return format_keyvalue(items, "degradation config")

    @classmethod
    def from_text(cls, text: str) -> "DegradeConfig":
        raw = parse_keyvalue(text)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, val in raw.items():
            if key not in known:
                raise FormatError(f"unknown degradation key {key!r}")
            default = getattr(cls(), key)
            try:
                if isinstance(default, bool):
                    kwargs[key] = _bool(val)
                elif isinstance(default, tuple):
                    lo, hi = _range(val)
                    kwargs[key] = (int(lo), int(hi)) if isinstance(default[0], int) else (lo, hi)
                elif isinstance(default, int):
                    kwargs[key] = int(val)
                else:
                    kwargs[key] = float(val)
            except ValueError as exc:
                raise FormatError(f"bad value for {key}: {val!r}") from exc
        return cls(**kwargs)


def _num(v) -> str:
    return str(int(v)) if isinstance(v, (int, np.integer)) and not isinstance(v, bool) else repr(float(v))


@dataclass(frozen=True)
class Illumination:
    gain: float
    bias: float
    centre: tuple[float, float]
    sigma: float


@dataclass(frozen=True)
class Blur:
    sigma: float


@dataclass(frozen=True)
class Spot:
    centre: tuple[float, float]
    radius: float
    brightness: float


@dataclass
class Applied:
    """The exact parameters one call to :func:`degrade` used."""

    seed: int
    illumination: Optional[Illumination] = None
    blur: Optional[Blur] = None
    spots: list[Spot] = field(default_factory=list)
    warning: str = ""

    def to_text(self) -> str:
        items: dict = {"seed": self.seed}
        if self.illumination is not None:
            il = self.illumination
            items.update(
                illum_gain=repr(il.gain),
                illum_bias=repr(il.bias),
                illum_centre=f"{il.centre[0]!r}, {il.centre[1]!r}",
                illum_sigma=repr(il.sigma),
            )
        if self.blur is not None:
            items["blur_sigma"] = repr(self.blur.sigma)
        if self.spots:
            items["spots_count"] = len(self.spots)
            for k, s in enumerate(self.spots):
                items[f"spot{k}_centre"] = f"{s.centre[0]!r}, {s.centre[1]!r}"
                items[f"spot{k}_radius"] = repr(s.radius)
                items[f"spot{k}_brightness"] = repr(s.brightness)
        if self.warning:
            items["warning"] = self.warning
        return format_keyvalue(items, "applied degradation parameters")

    @classmethod
    def from_text(cls, text: str) -> "Applied":
        raw = parse_keyvalue(text)
        out = cls(seed=int(raw["seed"]), warning=raw.get("warning", ""))
        if "illum_gain" in raw:
            out.illumination = Illumination(
                float(raw["illum_gain"]), float(raw["illum_bias"]), _range(raw["illum_centre"]), float(raw["illum_sigma"])
            )
        if "blur_sigma" in raw:
            out.blur = Blur(float(raw["blur_sigma"]))
        for k in range(int(raw.get("spots_count", 0))):
            out.spots.append(
                Spot(_range(raw[f"spot{k}_centre"]), float(raw[f"spot{k}_radius"]), float(raw[f"spot{k}_brightness"]))
            )
        return out


def _stream(seed: int, family: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, FAMILY_TAGS[family]]))


def _sample_illumination(rng, cfg: DegradeConfig, h: int, w: int) -> Illumination:
    gain = rng.uniform(*cfg.illum_gain)
    bias = rng.uniform(*cfg.illum_bias)
    jy, jx = rng.uniform(-cfg.illum_jitter, cfg.illum_jitter, size=2)
    sigma = rng.uniform(*cfg.illum_sigma) * min(h, w)
    centre = ((h - 1) / 2.0 + jy * h, (w - 1) / 2.0 + jx * w)
    return Illumination(float(gain), float(bias), (float(centre[0]), float(centre[1])), float(sigma))


def _sample_spots(rng, cfg: DegradeConfig, h: int, w: int) -> list[Spot]:
    count = int(rng.integers(cfg.spots_count[0], cfg.spots_count[1] + 1))
    spots = []
    for _ in range(count):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        radius = rng.uniform(*cfg.spots_radius) * min(h, w)
        bright = rng.uniform(*cfg.spots_brightness)
        spots.append(Spot((float(cy * (h - 1)), float(cx * (w - 1))), float(radius), float(bright)))
    return spots


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    half = int(math.ceil(3.0 * sigma))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(ax**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _apply_illumination(img: np.ndarray, p: Illumination) -> np.ndarray:
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    halo = np.exp(-((yy - p.centre[0]) ** 2 + (xx - p.centre[1]) ** 2) / (2.0 * p.sigma**2))
    return np.clip(p.gain * img * halo[..., None] + p.bias, 0.0, 1.0)


def _apply_blur(img: np.ndarray, p: Blur) -> np.ndarray:
    k = gaussian_kernel1d(p.sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def _apply_spots(img: np.ndarray, spots: list[Spot]) -> np.ndarray:
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    add = np.zeros((h, w))
    for s in spots:
        d2 = (yy - s.centre[0]) ** 2 + (xx - s.centre[1]) ** 2
        add += s.brightness * np.exp(-d2 / (2.0 * (s.radius / 2.0) ** 2))
    return np.clip(img + add[..., None], 0.0, 1.0)


def _check_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected an H x W x 3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise InputError("image values must lie in [0, 1]")
    return img


def degrade(image, cfg: DegradeConfig = DegradeConfig()) -> tuple[np.ndarray, Applied]:
    """Apply the enabled families in order illumination, blur, spots."""
    img = _check_image(image)
    applied = Applied(seed=cfg.seed)
    if not cfg.families():
        applied.warning = "no degradation family enabled; image returned unchanged"
        return img.copy(), applied
    h, w = img.shape[:2]
    out = img
    if cfg.illum_enabled:
        applied.illumination = _sample_illumination(_stream(cfg.seed, "illumination"), cfg, h, w)
        out = _apply_illumination(out, applied.illumination)
    if cfg.blur_enabled:
        applied.blur = Blur(float(_stream(cfg.seed, "blur").uniform(*cfg.blur_sigma)))
        out = _apply_blur(out, applied.blur)
    if cfg.spots_enabled:
        applied.spots = _sample_spots(_stream(cfg.seed, "spots"), cfg, h, w)
        out = _apply_spots(out, applied.spots)
    return out, applied


def degrade_suite(image, seed: int, cfg: DegradeConfig | None = None) -> dict[str, tuple[np.ndarray, Applied]]:
    """The six canonical single and combined variants, keyed by name."""
    base = DegradeConfig(seed=seed) if cfg is None else replace(cfg, seed=seed)
    return {name: degrade(image, base.only(fams)) for name, fams in SUITE.items()}
