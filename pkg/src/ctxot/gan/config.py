"""Training hyperparameters and their text form."""

from __future__ import annotations

from dataclasses import dataclass, fields

from ..fileio import FormatError, format_keyvalue, parse_keyvalue

__all__ = ["TrainConfig"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch: int = 2
    lr_critic: float = 1e-4
    lr_generator: float = 5e-5
    lr_decay: float = 0.1
    lr_decay_every: int = 50
    rms_rho: float = 0.9
    rms_eps: float = 1e-8
    w_ctx: float = 50.0
    w_gan: float = 1.0
    gp_weight: float = 10.0
    n_critic: int = 1
    h: float = 0.5
    seed: int = 0
    image_size: int = 256
    max_steps: int = 0
    augment: bool = True
    encoder_seed: int = 0

    def __post_init__(self):
        for name in ("lr_critic", "lr_generator", "lr_decay", "rms_rho", "rms_eps", "h"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.w_ctx < 0 or self.w_gan < 0 or self.gp_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.epochs < 1 or self.batch < 1 or self.n_critic < 1 or self.lr_decay_every < 1:
            raise ValueError("epochs, batch, n_critic and lr_decay_every must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0 (0 means no limit)")
        if self.image_size < 8 or self.image_size % 8:
            raise ValueError(f"image_size must be a positive multiple of 8, got {self.image_size}")

    def to_text(self) -> str:
        items = {}
        for f in fields(self):
            v = getattr(self, f.name)
            items[f.name] = ("true" if v else "false") if isinstance(v, bool) else repr(v)
        return format_keyvalue(items, "training config")

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        raw = parse_keyvalue(text)
        types = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        kwargs = {}
        for key, val in raw.items():
            if key not in types:
                raise FormatError(f"unknown training key {key!r}")
            kind = types[key]
            try:
                if kind is bool:
                    low = val.strip().lower()
                    if low not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(val)
                    kwargs[key] = low in ("true", "1", "yes")
                else:
                    kwargs[key] = kind(val)
            except ValueError as exc:
                raise FormatError(f"bad value for {key}: {val!r}") from exc
        return cls(**kwargs)
