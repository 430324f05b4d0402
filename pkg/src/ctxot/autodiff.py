"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive records a node whose backward rule is itself written in
terms of primitives, so gradients can be differentiated again
(``grad(..., create_graph=True)``).  Nodes carry a global creation index;
sorting by that index gives a valid topological order of the tape.

Broadcasting is deliberately narrow: elementwise binary ops accept equal
shapes or a 0-d scalar on either side.  Anything else goes through
:func:`broadcast_to` explicitly.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DimensionError",
    "Tensor",
    "tensor",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "square",
    "sqrt",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "sum",
    "mean",
    "min_over_axis",
    "broadcast_to",
    "reshape",
    "transpose",
    "matmul",
    "matvec",
    "conv2d",
    "upsample_nearest",
    "concat_channels",
    "slice_axis",
    "global_average_pool",
    "pairwise_sqdist",
    "gradient_error",
]


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that stops operations from being recorded."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class _Node:
    __slots__ = ("index", "inputs", "backward", "op")

    def __init__(self, inputs, backward, op):
        self.index = next(_ids)
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tensor:
    """Immutable n-dimensional float64 array that may sit on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(s < 1 for s in arr.shape):
            raise DimensionError(f"every extent must be >= 1, got shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out._node = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def backward(self, gradient=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        leaves = [t for t in _reachable(self) if t.is_leaf and t.requires_grad]
        if self.is_leaf and self.requires_grad and self not in leaves:
            leaves.append(self)
        grads = grad(self, leaves, gradient)
        for leaf, g in zip(leaves, grads):
            if g is None:
                continue
            leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if x is None:
        raise TypeError("expected a tensor or array, got None")
    return Tensor._wrap(np.array(x, dtype=np.float64))


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(inputs, backward, op)
    return out


# ---------------------------------------------------------------------------
# tape traversal


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    found: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        found.append(t)
        if t._node is not None:
            stack.extend(t._node.inputs)
    return found


def grad(
    outputs: Tensor | Sequence[Tensor],
    inputs: Tensor | Sequence[Tensor],
    grad_outputs=None,
    create_graph: bool = False,
) -> list[Tensor | None]:
    """Gradients of ``sum(outputs)`` with respect to ``inputs``.

    With ``create_graph=True`` the backward computation is itself recorded,
    so the returned gradients can be differentiated again.  Inputs that do
    not influence the outputs get ``None``.
    """
    if isinstance(outputs, Tensor):
        outputs = [outputs]
    single = isinstance(inputs, Tensor)
    if single:
        inputs = [inputs]
    if grad_outputs is None:
        grad_outputs = [None] * len(outputs)
    elif isinstance(grad_outputs, (Tensor, np.ndarray, float, int)):
        grad_outputs = [grad_outputs]

    pending: dict[int, Tensor] = {}
    owners: dict[int, Tensor] = {}
    nodes: dict[int, Tensor] = {}

    def accumulate(t: Tensor, g: Tensor) -> None:
        key = id(t)
        owners[key] = t
        pending[key] = g if key not in pending else add(pending[key], g)

    for out, g in zip(outputs, grad_outputs):
        if not out.requires_grad:
            continue
        g = Tensor._wrap(np.ones_like(out.data)) if g is None else _lift(g)
        if g.shape != out.shape:
            raise DimensionError(f"grad_output shape {g.shape} != output shape {out.shape}")
        accumulate(out, g)
        for t in _reachable(out):
            if t._node is not None:
                nodes[id(t)] = t

    wanted = {id(t) for t in inputs}
    with _grad_mode(create_graph):
        for t in sorted(nodes.values(), key=lambda t: t._node.index, reverse=True):
            key = id(t)
            g = pending.get(key) if key in wanted else pending.pop(key, None)
            if g is None:
                continue
            node = t._node
            for inp, ig in zip(node.inputs, node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                accumulate(inp, ig)

    result = [pending.get(id(t)) for t in inputs]
    return result


# ---------------------------------------------------------------------------
# elementwise


def _binary_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not equal and neither is a scalar")


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    return sum(g)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _record(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shape(a, b, "div")

    def backward(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _record(a.data / b.data, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = _lift(a)
    return _record(-a.data, (a,), lambda g: (neg(g),), "neg")


def exp(a) -> Tensor:
    a = _lift(a)
    out = None

    def backward(g):
        return (mul(g, out),)

    out = _record(np.exp(a.data), (a,), backward, "exp")
    return out


def square(a) -> Tensor:
    a = _lift(a)
    return _record(a.data * a.data, (a,), lambda g: (mul(g, mul(a, 2.0)),), "square")


def sqrt(a, eps: float = 0.0) -> Tensor:
    """``sqrt(a + eps)``; a small ``eps`` keeps the derivative finite at zero."""
    a = _lift(a)
    out = None

    def backward(g):
        return (div(mul(g, 0.5), out),)

    out = _record(np.sqrt(a.data + eps), (a,), backward, "sqrt")
    return out


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = None

    def backward(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    val = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _record(val, (a,), backward, "sigmoid")
    return out


def tanh(a) -> Tensor:
    a = _lift(a)
    out = None

    def backward(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _record(np.tanh(a.data), (a,), backward, "tanh")
    return out


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = _lift(a)
    slope = Tensor._wrap(np.where(a.data > 0, 1.0, alpha))
    return _record(a.data * slope.data, (a,), lambda g: (mul(g, slope),), "leaky_relu")


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    return tuple(sorted(set(norm)))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    src = a.shape
    try:
        val = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} into {shape}") from exc
    return _record(val, (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (transpose(g, inverse),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    """Expand size-1 axes (same rank) or a 0-d scalar to ``shape``."""
    a = _lift(a)
    shape = tuple(shape)
    if a.ndim == 0:
        axes = None
    else:
        if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
            raise DimensionError(f"cannot broadcast {a.shape} to {shape}")
        axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)

    def backward(g):
        if axes is None:
            return (sum(g),)
        return (sum(g, axes, keepdims=True) if axes else g,)

    return _record(np.broadcast_to(a.data, shape), (a,), backward, "broadcast_to")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    src = a.shape

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    val = a.data.sum(axis=axes, keepdims=keepdims)
    return _record(val, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return div(sum(a, axes, keepdims), float(count))


def _gather(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    src = a.shape

    def backward(g):
        return (_scatter(g, index, axis, src),)

    val = np.take_along_axis(a.data, np.expand_dims(index, axis), axis).squeeze(axis)
    return _record(val, (a,), backward, "gather")


def _scatter(g: Tensor, index: np.ndarray, axis: int, shape) -> Tensor:
    def backward(gg):
        return (_gather(gg, index, axis),)

    val = np.zeros(shape)
    np.put_along_axis(val, np.expand_dims(index, axis), np.expand_dims(g.data, axis), axis)
    return _record(val, (g,), backward, "scatter")


def min_over_axis(a, axis: int) -> Tensor:
    """Minimum along ``axis``; the gradient goes to the lowest-index minimiser."""
    a = _lift(a)
    (ax,) = _norm_axes(axis, a.ndim)
    index = np.argmin(a.data, axis=ax)
    return _gather(a, index, ax)


def slice_axis(a, start: int, stop: int, axis: int = 1) -> Tensor:
    a = _lift(a)
    (ax,) = _norm_axes(axis, a.ndim)
    extent = a.shape[ax]
    if not 0 <= start < stop <= extent:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {ax} of extent {extent}")
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)
    return _record(a.data[sl], (a,), lambda g: (_pad_axis(g, start, extent - stop, ax),), "slice")


def _pad_axis(g: Tensor, before: int, after: int, axis: int) -> Tensor:
    widths = [(0, 0)] * g.ndim
    widths[axis] = (before, after)
    stop = before + g.shape[axis]
    return _record(np.pad(g.data, widths), (g,), lambda gg: (slice_axis(gg, before, stop, axis),), "pad")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate ``[B,C_k,H,W]`` tensors along the channel axis."""
    tensors = [_lift(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise DimensionError(f"concat_channels: {t.shape} incompatible with {ref} on axes 0,2,3")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(slice_axis(g, int(lo), int(hi), 1) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), backward, "concat")


def global_average_pool(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 4:
        raise DimensionError(f"global_average_pool expects [B,C,H,W], got {a.shape}")
    return mean(a, axis=(2, 3))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _record(a.data @ b.data, (a, b), backward, "matmul")


def matvec(m, v) -> Tensor:
    m, v = _lift(m), _lift(v)
    if v.ndim != 1:
        raise DimensionError(f"matvec expects a vector, got {v.shape}")
    return reshape(matmul(m, reshape(v, (v.shape[0], 1))), (m.shape[0],))


def pairwise_sqdist(a, b) -> Tensor:
    """``out[i, j] = ||a[i] - b[j]||^2`` by direct differences (exact zero on equal rows)."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"pairwise_sqdist: {a.shape} vs {b.shape}")
    n, m = a.shape[0], b.shape[0]
    val = np.empty((n, m))
    step = max(1, (1 << 22) // max(1, m * a.shape[1]))
    for lo in range(0, n, step):
        diff = a.data[lo : lo + step, None, :] - b.data[None, :, :]
        val[lo : lo + step] = np.einsum("ijk,ijk->ij", diff, diff)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            rows = broadcast_to(sum(g, 1, keepdims=True), a.shape)
            ga = mul(sub(mul(a, rows), matmul(g, b)), 2.0)
        if b.requires_grad:
            cols = broadcast_to(reshape(sum(g, 0), (m, 1)), b.shape)
            gb = mul(sub(mul(b, cols), matmul(transpose(g), a)), 2.0)
        return ga, gb

    return _record(val, (a, b), backward, "pairwise_sqdist")


# ---------------------------------------------------------------------------
# convolution family: conv2d, its input adjoint and its kernel adjoint are
# closed under differentiation.


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    cols = _windows(x, w.shape[2], w.shape[3], stride, padding)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_adjoint(g: np.ndarray, w: np.ndarray, in_shape, stride: int, padding: int) -> np.ndarray:
    b, _, h, wd = in_shape
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    out = np.zeros((b, w.shape[1], h + 2 * padding, wd + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += contrib
    return out[:, :, padding : padding + h, padding : padding + wd]


def _conv_kernel_adjoint(x: np.ndarray, g: np.ndarray, w_shape, stride: int, padding: int) -> np.ndarray:
    cols = _windows(x, w_shape[2], w_shape[3], stride, padding)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))


def _conv_raw(x: Tensor, w: Tensor, stride: int, padding: int) -> Tensor:
    def backward(g):
        gx = _conv_input(g, w, x.shape, stride, padding) if x.requires_grad else None
        gw = _conv_kernel(x, g, w.shape, stride, padding) if w.requires_grad else None
        return gx, gw

    return _record(_conv_forward(x.data, w.data, stride, padding), (x, w), backward, "conv2d")


def _conv_input(g: Tensor, w: Tensor, in_shape, stride: int, padding: int) -> Tensor:
    def backward(gg):
        dg = _conv_raw(gg, w, stride, padding) if g.requires_grad else None
        dw = _conv_kernel(gg, g, w.shape, stride, padding) if w.requires_grad else None
        return dg, dw

    val = _conv_input_adjoint(g.data, w.data, in_shape, stride, padding)
    return _record(val, (g, w), backward, "conv2d_input_adjoint")


def _conv_kernel(x: Tensor, g: Tensor, w_shape, stride: int, padding: int) -> Tensor:
    def backward(gg):
        dx = _conv_input(g, gg, x.shape, stride, padding) if x.requires_grad else None
        dg = _conv_raw(x, gg, stride, padding) if g.requires_grad else None
        return dx, dg

    val = _conv_kernel_adjoint(x.data, g.data, w_shape, stride, padding)
    return _record(val, (x, g), backward, "conv2d_kernel_adjoint")


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``[B,Cin,H,W]`` with ``[Cout,Cin,kh,kw]``."""
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be [B,Cin,H,W], got {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [Cout,Cin,kh,kw], got {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d channel axis: input Cin={x.shape[1]} vs kernel Cin={kernel.shape[1]}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    kh, kw = kernel.shape[2:]
    if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
        raise DimensionError(
            f"conv2d spatial axes: kernel {kh}x{kw} exceeds padded input "
            f"{x.shape[2] + 2 * padding}x{x.shape[3] + 2 * padding}"
        )
    out = _conv_raw(x, kernel, stride, padding)
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (kernel.shape[0],):
            raise DimensionError(f"conv2d bias must be ({kernel.shape[0]},), got {bias.shape}")
        out = add(out, broadcast_to(reshape(bias, (1, bias.shape[0], 1, 1)), out.shape))
    return out


def upsample_nearest(x, factor: int) -> Tensor:
    x = _lift(x)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects [B,C,H,W], got {x.shape}")
    if factor == 1:
        return x
    return _upsample(x, factor)


def _upsample(x: Tensor, f: int) -> Tensor:
    val = x.data.repeat(f, axis=2).repeat(f, axis=3)
    return _record(val, (x,), lambda g: (_block_sum(g, f),), "upsample")


def _block_sum(g: Tensor, f: int) -> Tensor:
    b, c, h, w = g.shape
    val = g.data.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))
    return _record(val, (g,), lambda gg: (_upsample(gg, f),), "block_sum")


# ---------------------------------------------------------------------------
# finite-difference checking


def gradient_error(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    atol: float = 1e-7,
    which: Iterable[int] | None = None,
    coords: dict[int, np.ndarray] | None = None,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps tensors to a scalar tensor.  Entries whose true gradient is
    (numerically) zero are judged by absolute error against ``atol``: they
    contribute 0 when within it and ``inf`` otherwise.  ``coords`` limits
    the check to selected flat indices per input.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    which = list(range(len(arrays))) if which is None else list(which)
    leaves = [Tensor(a, requires_grad=i in which) for i, a in enumerate(arrays)]
    out = fn(*leaves)
    analytic = grad(out, [leaves[i] for i in which])
    worst = 0.0
    for k, i in zip(range(len(which)), which):
        a = np.zeros_like(arrays[i]) if analytic[k] is None else analytic[k].data
        flat = arrays[i].reshape(-1)
        picks = range(flat.size) if coords is None or i not in coords else coords[i]
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = _evaluate(fn, arrays, which)
            flat[idx] = orig - eps
            down = _evaluate(fn, arrays, which)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            got = a.reshape(-1)[idx]
            if not (np.isfinite(numeric) and np.isfinite(got)):
                return float("inf")
            scale = max(abs(numeric), abs(got))
            if scale <= atol:
                continue
            err = abs(got - numeric)
            if abs(numeric) <= atol:
                rel = 0.0 if err <= atol else float("inf")
            else:
                rel = err / scale
            worst = max(worst, rel)
    return worst


def _evaluate(fn, arrays, which) -> float:
    # inputs stay on the tape so functions that differentiate internally still work
    return fn(*[Tensor(x, requires_grad=i in which) for i, x in enumerate(arrays)]).item()
