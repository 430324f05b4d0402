"""Generator and critic networks plus spectral normalisation.

Parameters live in plain ``dict[str, np.ndarray]`` collections.  A forward
pass takes a matching dict of :class:`Tensor` leaves, so the same function
serves training (leaves on the tape) and inference (constants).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import DimensionError, Tensor

__all__ = [
    "SpectralState",
    "spectral_normalize",
    "init_generator",
    "init_critic",
    "generator_forward",
    "critic_forward",
    "generator_conv_names",
    "GEN_CHANNELS",
    "CRITIC_CHANNELS",
    "LOGIT_CLAMP",
]

GEN_CHANNELS = (16, 32, 64)
CRITIC_CHANNELS = (16, 32, 64, 128)
ATTENTION_REDUCTION = 8
ALPHA = 0.2
SIGMA_FLOOR = 1e-12
LOGIT_CLAMP = 1e-3


@dataclass
class SpectralState:
    """Power-iteration vector ``u`` (length = output channels)."""

    u: np.ndarray

    @classmethod
    def random(cls, rows: int, rng: np.random.Generator) -> "SpectralState":
        u = rng.standard_normal(rows)
        return cls(u / np.linalg.norm(u))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def spectral_normalize(weight, state: SpectralState, iterations: int = 1) -> Tensor:
    """Divide ``weight`` by its power-iteration estimate of the top singular value.

    The weight is viewed as a matrix of shape ``(out, rest)``.  ``state.u``
    is advanced ``iterations`` times and persists across calls; with
    ``iterations=0`` the stored vector is used as is.  The estimate
    ``u^T W v`` stays on the tape, as does ``weight``.
    """
    w = weight if isinstance(weight, Tensor) else Tensor(weight)
    mat = w.data.reshape(w.shape[0], -1)
    u = state.u
    v = _unit(mat.T @ u)
    for _ in range(iterations):
        v = _unit(mat.T @ u)
        u = _unit(mat @ v)
    state.u = u
    outer = Tensor._wrap(np.outer(u, v).reshape(w.shape))
    sigma = ad.sum(ad.mul(w, outer))
    if sigma.item() < SIGMA_FLOOR:
        sigma = Tensor._wrap(np.array(SIGMA_FLOOR))
    return ad.div(w, sigma)


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _conv(params, name, rng, cin, cout, k):
    params[f"{name}.w"] = _he(rng, (cout, cin, k, k), cin * k * k)
    params[f"{name}.b"] = np.zeros(cout)


def _attention(params, name, rng, c):
    hidden = max(1, c // ATTENTION_REDUCTION)
    params[f"{name}.w1"] = rng.standard_normal((c, hidden)) * np.sqrt(2.0 / c)
    params[f"{name}.b1"] = np.zeros(hidden)
    params[f"{name}.w2"] = rng.standard_normal((hidden, c)) * np.sqrt(1.0 / hidden)
    params[f"{name}.b2"] = np.zeros(c)


def init_generator(rng: np.random.Generator, channels=GEN_CHANNELS, warmup: int = 30):
    """Fresh generator parameters and their spectral-norm states."""
    c1, c2, c3 = channels
    p: dict[str, np.ndarray] = {}
    _conv(p, "enc1", rng, 3, c1, 3)
    _attention(p, "att1", rng, c1)
    _conv(p, "enc2", rng, c1, c2, 3)
    _attention(p, "att2", rng, c2)
    _conv(p, "enc3", rng, c2, c3, 3)
    _attention(p, "att3", rng, c3)
    _conv(p, "res1", rng, c3, c3, 3)
    _conv(p, "res2", rng, c3, c3, 3)
    _attention(p, "attb", rng, c3)
    _conv(p, "dec3", rng, c3 + c2, c2, 3)
    _attention(p, "attd3", rng, c2)
    _conv(p, "dec2", rng, c2 + c1, c1, 3)
    _attention(p, "attd2", rng, c1)
    _conv(p, "dec1", rng, c1 + 3, c1, 3)
    _attention(p, "attd1", rng, c1)
    _conv(p, "head", rng, c1, 3, 1)
    # residual branch starts closed: the untrained generator is the identity
    p["res_gain"] = np.zeros(())
    sn = {}
    for name in generator_conv_names(p):
        state = SpectralState.random(p[name].shape[0], rng)
        spectral_normalize(p[name], state, warmup)
        sn[name] = state
    return p, sn


def generator_conv_names(params) -> list[str]:
    return [k for k in params if k.endswith(".w") and params[k].ndim == 4]


def init_critic(rng: np.random.Generator, channels=CRITIC_CHANNELS):
    p: dict[str, np.ndarray] = {}
    cin = 3
    for i, c in enumerate(channels):
        _conv(p, f"conv{i + 1}", rng, cin, c, 3)
        cin = c
    p["fc.w"] = rng.standard_normal((cin, 1)) * np.sqrt(1.0 / cin)
    p["fc.b"] = np.zeros(1)
    return p


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    y = ad.matmul(x, w)
    return ad.add(y, ad.broadcast_to(ad.reshape(b, (1, b.shape[0])), y.shape))


def _channel_attention(x: Tensor, p, name: str) -> Tensor:
    b, c = x.shape[:2]
    z = ad.global_average_pool(x)
    z = ad.leaky_relu(_linear(z, p[f"{name}.w1"], p[f"{name}.b1"]), ALPHA)
    gate = ad.sigmoid(_linear(z, p[f"{name}.w2"], p[f"{name}.b2"]))
    return ad.mul(x, ad.broadcast_to(ad.reshape(gate, (b, c, 1, 1)), x.shape))


def generator_forward(
    x: Tensor,
    params: dict[str, Tensor],
    sn: dict[str, SpectralState],
    sn_iterations: int = 1,
) -> Tensor:
    """U-Net enhancement of a ``[B, 3, H, W]`` batch in ``[0, 1]``.

    Output is ``sigmoid(logit(x) + res_gain * head(features))``, so it lies
    in ``(0, 1)`` and reduces to (clamped) ``x`` when ``res_gain`` is 0.
    """
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"generator expects [B,3,H,W], got {x.shape}")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise DimensionError(f"generator needs H and W divisible by 8, got {x.shape[2]}x{x.shape[3]}")

    def conv(h, name, stride=1):
        w = spectral_normalize(params[f"{name}.w"], sn[f"{name}.w"], sn_iterations)
        k = w.shape[2]
        return ad.conv2d(h, w, params[f"{name}.b"], stride=stride, padding=k // 2)

    def act(h):
        return ad.leaky_relu(h, ALPHA)

    e1 = _channel_attention(act(conv(x, "enc1", 2)), params, "att1")
    e2 = _channel_attention(act(conv(e1, "enc2", 2)), params, "att2")
    e3 = _channel_attention(act(conv(e2, "enc3", 2)), params, "att3")
    r = conv(act(conv(e3, "res1")), "res2")
    b = _channel_attention(act(ad.add(e3, r)), params, "attb")
    d3 = _channel_attention(act(conv(ad.concat_channels([ad.upsample_nearest(b, 2), e2]), "dec3")), params, "attd3")
    d2 = _channel_attention(act(conv(ad.concat_channels([ad.upsample_nearest(d3, 2), e1]), "dec2")), params, "attd2")
    d1 = _channel_attention(act(conv(ad.concat_channels([ad.upsample_nearest(d2, 2), x]), "dec1")), params, "attd1")
    delta = conv(d1, "head")

    clamped = np.clip(x.data, LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
    logit = Tensor._wrap(np.log(clamped) - np.log1p(-clamped))
    return ad.sigmoid(ad.add(logit, ad.mul(delta, params["res_gain"])))


def critic_forward(x: Tensor, params: dict[str, Tensor], depth: int = len(CRITIC_CHANNELS)) -> Tensor:
    """Scalar score per image, shape ``[B]``; no output nonlinearity."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"critic expects [B,3,H,W], got {x.shape}")
    h = x
    for i in range(depth):
        h = ad.leaky_relu(ad.conv2d(h, params[f"conv{i + 1}.w"], params[f"conv{i + 1}.b"], stride=2, padding=1), ALPHA)
    out = _linear(ad.global_average_pool(h), params["fc.w"], params["fc.b"])
    return ad.reshape(out, (x.shape[0],))
