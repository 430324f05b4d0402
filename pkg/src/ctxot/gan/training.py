"""Adversarial training with the contextual transport cost.

Each generator step minimises::

    w_ctx * mean_b contextual_cost(encode(y_b), encode(G(y_b)), h)
      + w_gan * (-mean_b D(G(y_b)))

and each critic step minimises ``mean D(G(y)) - mean D(x) + gp_weight * GP``
with ``G(y)`` held fixed.  The generator's convolutions are spectrally
normalised; the critic is regularised by the gradient penalty.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..autodiff import DimensionError, Tensor
from ..features import EncoderSpec, encode_batch
from ..fileio import FormatError, atomic_write_bytes
from ..imageops import augment
from ..transport import contextual_cost
from .config import TrainConfig
from .nets import (
    SpectralState,
    critic_forward,
    generator_forward,
    init_critic,
    init_generator,
)

__all__ = [
    "TrainingDiverged",
    "RMSprop",
    "gradient_penalty",
    "CriticRecord",
    "GeneratorRecord",
    "Trainer",
    "train",
    "enhance",
    "enhance_batch",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"CTXG"
CHECKPOINT_VERSION = 1
GP_EPS = 1e-12


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; ``record`` holds the offending step."""

    def __init__(self, record):
        super().__init__(f"non-finite loss at step {record.step}: {record}")
        self.record = record


class RMSprop:
    """``v <- rho v + (1 - rho) g^2``; ``p <- p - lr g / (sqrt(v) + eps)``."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, rho: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.square_avg = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            v = self.square_avg[k]
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            params[k] = params[k] - self.lr * g / (np.sqrt(v) + self.eps)


def gradient_penalty(
    critic: Callable[[Tensor], Tensor],
    real: np.ndarray,
    fake: np.ndarray,
    rng: np.random.Generator | None = None,
    mix: np.ndarray | None = None,
) -> Tensor:
    """``mean_b (||d critic / d x_hat||_2 - 1)^2`` at random interpolates.

    ``x_hat = eps * real + (1 - eps) * fake`` with one ``eps ~ U(0, 1)`` per
    sample (or the given ``mix``).  The result stays differentiable with
    respect to the critic's parameters.
    """
    real = np.asarray(real.data if isinstance(real, Tensor) else real, dtype=np.float64)
    fake = np.asarray(fake.data if isinstance(fake, Tensor) else fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise DimensionError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    b = real.shape[0]
    if mix is None:
        rng = np.random.default_rng() if rng is None else rng
        mix = rng.uniform(0.0, 1.0, size=b)
    eps = np.asarray(mix, dtype=np.float64).reshape((b,) + (1,) * (real.ndim - 1))
    x_hat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = critic(x_hat)
    (g,) = ad.grad(ad.sum(scores), [x_hat], create_graph=True)
    if g is None:
        return Tensor(1.0)
    axes = tuple(range(1, real.ndim))
    norms = ad.sqrt(ad.sum(ad.square(g), axis=axes), GP_EPS)
    return ad.mean(ad.square(ad.sub(norms, 1.0)))


@dataclass(frozen=True)
class CriticRecord:
    step: int
    loss: float
    wgap: float
    penalty: float


@dataclass(frozen=True)
class GeneratorRecord:
    step: int
    total: float
    contextual: float
    adversarial: float


def _leaves(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def _consts(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor._wrap(v) for k, v in params.items()}


def _nchw(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(batch, dtype=np.float64).transpose(0, 3, 1, 2))


def _nhwc(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch.transpose(0, 2, 3, 1))


class Trainer:
    """Holds networks, optimiser state and random streams for one run."""

    def __init__(self, cfg: TrainConfig, encoder: EncoderSpec | None = None):
        self.cfg = cfg
        self.encoder = encoder or EncoderSpec(seed=cfg.encoder_seed)
        init_seq, data_seq, gp_seq, aug_seq = np.random.SeedSequence(cfg.seed).spawn(4)
        init_rng = np.random.default_rng(init_seq)
        self.gen, self.sn = init_generator(init_rng)
        self.critic = init_critic(init_rng)
        self.data_rng = np.random.default_rng(data_seq)
        self.gp_rng = np.random.default_rng(gp_seq)
        self.aug_rng = np.random.default_rng(aug_seq)
        self.opt_gen = RMSprop(self.gen, cfg.lr_generator, cfg.rms_rho, cfg.rms_eps)
        self.opt_critic = RMSprop(self.critic, cfg.lr_critic, cfg.rms_rho, cfg.rms_eps)
        self.step = 0
        self.epoch = 0

    # -- schedule ------------------------------------------------------------

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch
        factor = self.cfg.lr_decay ** (epoch // self.cfg.lr_decay_every)
        self.opt_gen.lr = self.cfg.lr_generator * factor
        self.opt_critic.lr = self.cfg.lr_critic * factor

    # -- forward helpers -----------------------------------------------------

    def generate(self, y: np.ndarray, params=None, sn_iterations: int = 0) -> Tensor:
        params = _consts(self.gen) if params is None else params
        return generator_forward(Tensor._wrap(_nchw(y)), params, self.sn, sn_iterations)

    def score(self, x, params=None) -> Tensor:
        params = _consts(self.critic) if params is None else params
        x = x if isinstance(x, Tensor) else Tensor._wrap(_nchw(x))
        return critic_forward(x, params)

    # -- steps ---------------------------------------------------------------

    def critic_step(self, real: np.ndarray, noisy: np.ndarray) -> CriticRecord:
        """One optimiser step on the critic; the generator output is a constant."""
        if len(real) == 0 or len(noisy) == 0:
            raise ValueError("critic_step needs non-empty batches")
        with ad.no_grad():
            fake = self.generate(noisy).data
        leaves = _leaves(self.critic)
        real_t = Tensor._wrap(_nchw(real))
        fake_t = Tensor._wrap(fake)
        d_real = ad.mean(critic_forward(real_t, leaves))
        d_fake = ad.mean(critic_forward(fake_t, leaves))
        if real_t.shape == fake_t.shape:
            penalty = gradient_penalty(lambda z: critic_forward(z, leaves), real_t.data, fake, self.gp_rng)
        else:
            n = min(real_t.shape[0], fake_t.shape[0])
            penalty = gradient_penalty(lambda z: critic_forward(z, leaves), real_t.data[:n], fake[:n], self.gp_rng)
        loss = ad.add(ad.sub(d_fake, d_real), ad.mul(penalty, self.cfg.gp_weight))
        names = list(leaves)
        grads = ad.grad(loss, [leaves[k] for k in names])
        self.opt_critic.step(self.critic, {k: g.data for k, g in zip(names, grads) if g is not None})
        return CriticRecord(self.step, loss.item(), d_real.item() - d_fake.item(), penalty.item())

    def generator_loss(self, noisy: np.ndarray, params: dict[str, Tensor], sn_iterations: int = 1):
        """Total loss tensor plus its two components for a noisy batch."""
        fake = self.generate(noisy, params, sn_iterations)
        with ad.no_grad():
            y_feats = encode_batch(Tensor._wrap(_nchw(noisy)), self.encoder)
        f_feats = encode_batch(fake, self.encoder)
        terms = [contextual_cost(a, b, self.cfg.h) for a, b in zip(y_feats, f_feats)]
        ctx = terms[0]
        for t in terms[1:]:
            ctx = ad.add(ctx, t)
        ctx = ad.div(ctx, float(len(terms)))
        adv = ad.neg(ad.mean(critic_forward(fake, _consts(self.critic))))
        total = ad.add(ad.mul(ctx, self.cfg.w_ctx), ad.mul(adv, self.cfg.w_gan))
        return total, ctx, adv

    def generator_step(self, noisy: np.ndarray) -> GeneratorRecord:
        if len(noisy) == 0:
            raise ValueError("generator_step needs a non-empty batch")
        leaves = _leaves(self.gen)
        total, ctx, adv = self.generator_loss(noisy, leaves, sn_iterations=1)
        names = list(leaves)
        grads = ad.grad(total, [leaves[k] for k in names])
        self.opt_gen.step(self.gen, {k: g.data for k, g in zip(names, grads) if g is not None})
        return GeneratorRecord(self.step, total.item(), ctx.item(), adv.item())

    # -- loop ----------------------------------------------------------------

    def _prepare(self, batch: np.ndarray) -> np.ndarray:
        if not self.cfg.augment:
            return batch
        return np.stack([augment(img, self.aug_rng) for img in batch])

    def fit(
        self,
        clean: np.ndarray,
        noisy: np.ndarray,
        checkpoint: str | Path | None = None,
        log: str | Path | None = None,
        on_step: Callable | None = None,
    ) -> list[tuple[CriticRecord, GeneratorRecord]]:
        """Run the schedule over unpaired pools of ``H x W x 3`` images."""
        clean = np.asarray(clean, dtype=np.float64)
        noisy = np.asarray(noisy, dtype=np.float64)
        if len(clean) == 0 or len(noisy) == 0:
            raise ValueError("both image pools must be non-empty")
        for pool in (clean, noisy):
            if pool.ndim != 4 or pool.shape[3] != 3:
                raise DimensionError(f"image pools must be [N,H,W,3], got {pool.shape}")
            r = self.encoder.reduction
            if pool.shape[1] % max(8, r) or pool.shape[2] % max(8, r):
                raise DimensionError(f"image size {pool.shape[1]}x{pool.shape[2]} not divisible by {max(8, r)}")
        cfg = self.cfg
        batch = min(cfg.batch, len(noisy))
        per_epoch = max(1, len(noisy) // batch)
        total_steps = cfg.epochs * per_epoch
        if cfg.max_steps:
            total_steps = min(total_steps, cfg.max_steps)
        history = []
        rows = []
        while self.step < total_steps:
            self.set_epoch(self.step // per_epoch)
            order = self.data_rng.permutation(len(noisy))
            for k in range(per_epoch):
                if self.step >= total_steps:
                    break
                noisy_batch = self._prepare(noisy[order[k * batch : (k + 1) * batch]])
                for _ in range(cfg.n_critic):
                    idx = self.data_rng.choice(len(clean), size=min(batch, len(clean)), replace=False)
                    crec = self.critic_step(self._prepare(clean[idx]), noisy_batch)
                grec = self.generator_step(noisy_batch)
                values = (crec.loss, crec.wgap, grec.contextual, grec.total)
                if not all(math.isfinite(v) for v in values):
                    raise TrainingDiverged(grec if not math.isfinite(grec.total) else crec)
                history.append((crec, grec))
                rows.append((self.step, crec.loss, crec.wgap, grec.contextual))
                self.step += 1
                if on_step is not None:
                    on_step(self, crec, grec)
            if checkpoint is not None:
                save_checkpoint(checkpoint, self)
        if checkpoint is not None:
            save_checkpoint(checkpoint, self)
        if log is not None:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["step", "critic_loss", "wgap", "ctx"])
            writer.writerows([(s, repr(a), repr(b), repr(c)) for s, a, b, c in rows])
            atomic_write_bytes(log, buf.getvalue().encode("ascii"))
        return history

    def parameter_checksum(self) -> str:
        h = hashlib.sha256()
        for group in (self.gen, self.critic):
            for k in sorted(group):
                h.update(k.encode())
                h.update(np.ascontiguousarray(group[k], dtype="<f8").tobytes())
        return h.hexdigest()

    def enhance(self, image: np.ndarray) -> np.ndarray:
        return enhance_batch(self, np.asarray(image)[None])[0]


def train(clean, noisy, cfg: TrainConfig, checkpoint=None, log=None) -> Trainer:
    trainer = Trainer(cfg)
    trainer.fit(clean, noisy, checkpoint, log)
    return trainer


# ---------------------------------------------------------------------------
# checkpoints


def _blob(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    key = name.encode("utf-8")
    head = struct.pack("<I", len(key)) + key + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + np.ascontiguousarray(arr).tobytes()


def checkpoint_bytes(trainer: Trainer) -> bytes:
    blobs = []
    for k, v in trainer.gen.items():
        blobs.append(_blob(f"gen/{k}", v))
    for k, v in trainer.critic.items():
        blobs.append(_blob(f"critic/{k}", v))
    for k, st in trainer.sn.items():
        blobs.append(_blob(f"sn/{k}", st.u))
    for k, v in trainer.opt_gen.square_avg.items():
        blobs.append(_blob(f"opt_gen/{k}", v))
    for k, v in trainer.opt_critic.square_avg.items():
        blobs.append(_blob(f"opt_critic/{k}", v))
    blobs.append(_blob("state/step", np.array(float(trainer.step))))
    blobs.append(_blob("state/epoch", np.array(float(trainer.epoch))))
    cfg = trainer.cfg.to_text().encode("utf-8")
    out = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(cfg)) + cfg
    out += struct.pack("<I", len(blobs)) + b"".join(blobs)
    return out


def save_checkpoint(path, trainer: Trainer) -> None:
    atomic_write_bytes(path, checkpoint_bytes(trainer))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: checkpoint truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Trainer:
    raw = Path(path).read_bytes()
    rd = _Reader(raw, path)
    if rd.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version = rd.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        cfg = TrainConfig.from_text(rd.take(rd.u32()).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable config block") from exc
    blobs = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8", errors="replace")
        rank = rd.u32()
        shape = struct.unpack(f"<{rank}I", rd.take(4 * rank)) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        blobs[name] = np.frombuffer(rd.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if rd.pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after last blob")
    trainer = Trainer(cfg)
    _fill(trainer.gen, blobs, "gen/", path)
    _fill(trainer.critic, blobs, "critic/", path)
    _fill(trainer.opt_gen.square_avg, blobs, "opt_gen/", path)
    _fill(trainer.opt_critic.square_avg, blobs, "opt_critic/", path)
    for k in trainer.sn:
        trainer.sn[k] = SpectralState(_get(blobs, f"sn/{k}", trainer.sn[k].u.shape, path))
    trainer.step = int(_get(blobs, "state/step", (), path))
    trainer.set_epoch(int(_get(blobs, "state/epoch", (), path)))
    return trainer


def _get(blobs, name, shape, path) -> np.ndarray:
    if name not in blobs:
        raise FormatError(f"{path}: checkpoint lacks {name}")
    arr = blobs[name]
    if arr.shape != tuple(shape):
        raise FormatError(f"{path}: {name} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: {name} holds non-finite values")
    return arr.copy()


def _fill(target: dict, blobs, prefix, path) -> None:
    for k in target:
        target[k] = _get(blobs, prefix + k, target[k].shape, path)


# ---------------------------------------------------------------------------
# inference


def enhance_batch(trainer: Trainer, images: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        out = trainer.generate(np.asarray(images, dtype=np.float64), sn_iterations=0)
    return _nhwc(out.data)


def enhance(checkpoint, image: np.ndarray) -> np.ndarray:
    """One deterministic forward pass of a saved generator on an ``H x W x 3`` image."""
    trainer = checkpoint if isinstance(checkpoint, Trainer) else load_checkpoint(checkpoint)
    return trainer.enhance(image)
