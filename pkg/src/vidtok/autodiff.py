"""Dense tensors with reverse-mode automatic differentiation.

Every array in the tokenizer (videos, activations, latents, parameters) is a
:class:`Tensor`.  Operations record their inputs and a backward rule; calling
:func:`backward` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients.

Layout conventions used by the convolution ops: videos are
``(batch, time, channels, height, width)``; 3D kernels are
``(out, in, kt, kh, kw)``, 2D kernels ``(out, in, kh, kw)`` and temporal 1D
kernels ``(out, in, kt)``.

Broadcasting between two tensors is limited to identical shapes or one operand
holding a single element.  Constant (non-tensor) arrays may broadcast freely
into a tensor's shape via :func:`scale` and :func:`add_const`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "tensor",
    "parameter",
    "backward",
    "topological_order",
    "no_grad",
    "precision",
    "checked",
    "deterministic",
    "count_macs",
    "get_default_dtype",
    "round_half_away",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "add_const",
    "square",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "silu",
    "absolute",
    "tensor_sum",
    "mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "repeat",
    "take",
    "detach",
    "straight_through",
    "log_softmax",
    "logsumexp",
    "conv3d",
    "conv2d",
    "conv1d_temporal",
    "layer_norm",
    "numeric_grad",
    "relative_error",
]


class NonFiniteError(FloatingPointError):
    """Raised in checked mode when an operation produces NaN or Inf."""


class _State(threading.local):
    def __init__(self):
        self.dtype = np.dtype(np.float32)
        self.grad_enabled = True
        self.checked = False
        self.deterministic = False
        self.mac_counter: list[int] | None = None


_state = _State()


def get_default_dtype() -> np.dtype:
    return _state.dtype


@contextlib.contextmanager
def precision(dtype):
    """Create new tensors with ``dtype`` inside the block (64-bit for gradient checks)."""
    prev = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as any op yields a non-finite value."""
    prev = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = prev


@contextlib.contextmanager
def deterministic(enabled: bool = True):
    """Fix the reduction order of every op.

    The numpy kernels used here already reduce in a fixed order for a given
    shape, so the flag mainly records intent for callers (the trainer reads it
    to decide whether batch generation may run on a worker thread).
    """
    prev = _state.deterministic
    _state.deterministic = enabled
    try:
        yield
    finally:
        _state.deterministic = prev


def is_deterministic() -> bool:
    return _state.deterministic


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates of convolutions and blends executed in the block.

    Yields a one-element list whose entry holds the running total.
    """
    prev = _state.mac_counter
    counter = [0]
    _state.mac_counter = counter
    try:
        yield counter
    finally:
        _state.mac_counter = prev


def _record_macs(n: int) -> None:
    if _state.mac_counter is not None:
        _state.mac_counter[0] += int(n)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (shared by every quantizer)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


class Tensor:
    """An n-dimensional array that can take part in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = np.array(data, dtype=dtype or _state.dtype)
        if self.data.size == 0:
            raise ValueError("zero-size tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out.name = None
        out.grad = None
        track = _state.grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward_fn if track else None
        if _state.checked and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite value produced by {op}")
        return out

    # -- conveniences -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


# -- graph traversal -----------------------------------------------------


def topological_order(root: Tensor) -> list[Tensor]:
    """Every tensor reachable from ``root`` that requires grad, inputs before outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    Leaf tensors accumulate into their existing gradient; call
    :meth:`Tensor.zero_grad` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise -----------------------------------------------------------


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    b = _as_tensor(b)
    return _as_tensor(a, like=b), b


def _binary_shapes(a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if b.size == 1:
        return a.shape
    if a.size == 1:
        return b.shape
    raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes(a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes(a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes(a, b)

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shapes(a, b)
    out = a.data / b.data

    def bw(g):
        return _reduce_to(g / b.data, a.shape), _reduce_to(-g * out / b.data, b.shape)

    return Tensor._result(out, (a, b), bw, "div")


def neg(x: Tensor) -> Tensor:
    return Tensor._result(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a constant (scalar or array broadcastable to ``x.shape``)."""
    c = np.asarray(c, dtype=x.dtype)
    out = x.data * c
    if out.shape != x.shape:
        raise ValueError(f"constant of shape {c.shape} does not broadcast into {x.shape}")
    return Tensor._result(out, (x,), lambda g: (g * c,), "scale")


def add_const(x: Tensor, c) -> Tensor:
    """Add a constant (scalar or array broadcastable to ``x.shape``)."""
    c = np.asarray(c, dtype=x.dtype)
    out = x.data + c
    if out.shape != x.shape:
        raise ValueError(f"constant of shape {c.shape} does not broadcast into {x.shape}")
    return Tensor._result(out, (x,), lambda g: (g,), "add_const")


def square(x: Tensor) -> Tensor:
    return Tensor._result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def bw(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return Tensor._result(out, (x,), bw, "silu")


def absolute(x: Tensor) -> Tensor:
    return Tensor._result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


# -- reductions and shape ops ----------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.shape))

    def bw(g):
        return (np.broadcast_to(np.reshape(g, kept), x.shape).copy(),)

    return Tensor._result(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return scale(tensor_sum(x, axes, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def bw(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return Tensor._result(np.array(out), (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tensors, bw, "concat")


def repeat(x: Tensor, repeats: int, axis: int) -> Tensor:
    """Nearest-neighbour repetition: each slice along ``axis`` appears ``repeats`` times in a row."""
    axis = axis % x.ndim
    out = np.repeat(x.data, repeats, axis=axis)

    def bw(g):
        shape = x.shape[:axis] + (x.shape[axis], repeats) + x.shape[axis + 1 :]
        return (g.reshape(shape).sum(axis=axis + 1),)

    return Tensor._result(out, (x,), bw, "repeat")


def take(table: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows of ``table``; gradients scatter-add back into the selected rows."""
    indices = np.asarray(indices)
    out = np.take(table.data, indices, axis=axis)

    def bw(g):
        full = np.zeros_like(table.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)), tuple(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return Tensor._result(out, (table,), bw, "take")


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data, dtype=x.dtype)


def straight_through(x: Tensor, value) -> Tensor:
    """Forward ``value``; backward passes the incoming gradient to ``x`` unchanged."""
    value = np.asarray(value, dtype=x.dtype)
    if value.shape != x.shape:
        raise ValueError(f"straight-through value shape {value.shape} != {x.shape}")
    return Tensor._result(value.copy(), (x,), lambda g: (g,), "straight_through")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), bw, "log_softmax")


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(x.data - m), axis=axis, keepdims=True))
    weights = np.exp(x.data - lse)
    out = lse if keepdims else np.squeeze(lse, axis=axis)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * weights,)

    return Tensor._result(out, (x,), bw, "logsumexp")


# -- convolution ---------------------------------------------------------------


def _pad_pair(mode, k: int) -> tuple[int, int]:
    if mode == "causal" or mode == "causal_time":
        return (k - 1, 0)
    if mode == "symmetric":
        return ((k - 1) // 2, k // 2)
    if mode == "valid" or mode is None:
        return (0, 0)
    lo, hi = mode
    return (int(lo), int(hi))


def conv_output_shape(extents, kernel, stride, pads) -> tuple[int, ...]:
    out = []
    for n, k, s, (lo, hi) in zip(extents, kernel, stride, pads):
        padded = n + lo + hi
        if k > padded:
            raise ValueError(f"kernel extent {k} exceeds padded input extent {padded}")
        out.append((padded - k) // s + 1)
    return tuple(out)


def _conv_core(x: Tensor, w: Tensor, bias: Tensor | None, stride, pads) -> Tensor:
    """Correlation of ``x`` (B, T, C, H, W) with ``w`` (Co, C, kt, kh, kw)."""
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv expects 5-d input and kernel, got {x.shape} and {w.shape}")
    B, T, C, H, W = x.shape
    Co, Ci, kt, kh, kw = w.shape
    if Ci != C:
        raise ValueError(f"input has {C} channels, kernel expects {Ci}")
    if bias is not None and bias.shape != (Co,):
        raise ValueError(f"bias shape {bias.shape} != ({Co},)")
    kernel = (kt, kh, kw)
    ot, oh, ow = conv_output_shape((T, H, W), kernel, stride, pads)
    st, sh, sw = stride

    xl = np.transpose(x.data, (0, 1, 3, 4, 2))  # channels last
    xp = np.pad(xl, ((0, 0), pads[0], pads[1], pads[2], (0, 0)))
    wm = np.ascontiguousarray(np.transpose(w.data, (2, 3, 4, 1, 0)))  # (kt, kh, kw, Ci, Co)

    def window(i, j, k):
        return (
            slice(None),
            slice(i, i + st * (ot - 1) + 1, st),
            slice(j, j + sh * (oh - 1) + 1, sh),
            slice(k, k + sw * (ow - 1) + 1, sw),
            slice(None),
        )

    out = np.zeros((B, ot, oh, ow, Co), dtype=np.result_type(x.data, w.data))
    for i, j, k in itertools.product(range(kt), range(kh), range(kw)):
        out += np.matmul(xp[window(i, j, k)], wm[i, j, k])
    if bias is not None:
        out += bias.data
    _record_macs(B * ot * oh * ow * kt * kh * kw * Ci * Co)

    def bw(g):
        gl = np.transpose(g, (0, 1, 3, 4, 2))
        g2 = gl.reshape(-1, Co)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gwm = np.zeros_like(wm) if w.requires_grad else None
        for i, j, k in itertools.product(range(kt), range(kh), range(kw)):
            win = window(i, j, k)
            if gwm is not None:
                gwm[i, j, k] = xp[win].reshape(-1, Ci).T @ g2
            if gxp is not None:
                gxp[win] += np.matmul(gl, wm[i, j, k].T)
        gx = None
        if gxp is not None:
            (tl, _), (hl, _), (wl, _) = pads
            gx = np.transpose(gxp[:, tl : tl + T, hl : hl + H, wl : wl + W], (0, 1, 4, 2, 3))
        gw = None if gwm is None else np.transpose(gwm, (4, 3, 0, 1, 2))
        gb = None if bias is None else gl.sum(axis=(0, 1, 2, 3))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    result = np.ascontiguousarray(np.transpose(out, (0, 1, 4, 2, 3)))
    return Tensor._result(result, parents, bw, "conv")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    return tuple(int(a) for a in v)


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=1, time_padding="causal_time") -> Tensor:
    """3D convolution over (time, height, width).

    ``time_padding`` is ``"causal_time"`` (all temporal padding on the left, so
    output frame t sees input frames <= t), ``"symmetric"``, or an explicit
    ``(left, right)`` pair.  Spatial padding is always symmetric ("same" for
    odd kernels).
    """
    if x.size == 0:
        raise ValueError("zero-size input")
    kt, kh, kw = w.shape[2:]
    pads = (_pad_pair(time_padding, kt), _pad_pair("symmetric", kh), _pad_pair("symmetric", kw))
    return _conv_core(x, w, bias, _triple(stride), pads)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=1, pad=None) -> Tensor:
    """Per-frame spatial convolution; ``pad`` defaults to (k - 1) // 2 on each side."""
    if w.ndim != 4:
        raise ValueError(f"2D kernel must be (out, in, kh, kw), got {w.shape}")
    kh, kw = w.shape[2:]
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    if pad is None:
        pads = (_pad_pair("symmetric", kh), _pad_pair("symmetric", kw))
    elif isinstance(pad, int):
        pads = ((pad, pad), (pad, pad))
    else:
        pads = tuple(tuple(p) for p in pad)
    w5 = reshape(w, (w.shape[0], w.shape[1], 1, kh, kw))
    return _conv_core(x, w5, bias, (1, sh, sw), ((0, 0),) + pads)


def conv1d_temporal(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, causal: bool = True, pad=None) -> Tensor:
    """Convolution along time only, independently at every spatial location.

    ``pad`` overrides the default temporal padding, which is (k - 1, 0) when
    ``causal`` and symmetric otherwise.
    """
    if w.ndim != 3:
        raise ValueError(f"1D kernel must be (out, in, kt), got {w.shape}")
    kt = w.shape[2]
    if pad is None:
        pad = "causal" if causal else "symmetric"
    w5 = reshape(w, (w.shape[0], w.shape[1], kt, 1, 1))
    return _conv_core(x, w5, bias, (stride, 1, 1), (_pad_pair(pad, kt), (0, 0), (0, 0)))


# -- normalization -----------------------------------------------------------


def layer_norm(x: Tensor, scale_: Tensor | None = None, shift: Tensor | None = None, axes=(-1,), eps: float = 1e-6) -> Tensor:
    """Normalize to zero mean / unit variance over ``axes``, then apply the affine map.

    ``scale_`` and ``shift`` have the shape of the normalized dimensions.
    """
    axes = _norm_axes(axes, x.ndim)
    if not axes:
        raise ValueError("layer_norm needs at least one axis")
    norm_shape = tuple(x.shape[a] for a in axes)
    bshape = tuple(x.shape[i] if i in axes else 1 for i in range(x.ndim))
    for p in (scale_, shift):
        if p is not None and p.shape != norm_shape:
            raise ValueError(f"affine parameter shape {p.shape} != {norm_shape}")
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gamma = scale_.data.reshape(bshape) if scale_ is not None else None
    out = xhat * gamma if gamma is not None else xhat
    if shift is not None:
        out = out + shift.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i not in axes)

    def bw(g):
        dxhat = g * gamma if gamma is not None else g
        m1 = dxhat.mean(axis=axes, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        gs = None if scale_ is None else (g * xhat).sum(axis=other).reshape(norm_shape)
        gb = None if shift is None else g.sum(axis=other).reshape(norm_shape)
        return gx, gs, gb

    parents = [x]
    grads_order = [True, scale_ is not None, shift is not None]
    if scale_ is not None:
        parents.append(scale_)
    if shift is not None:
        parents.append(shift)

    def bw_packed(g):
        gx, gs, gb = bw(g)
        return tuple(v for v, keep in zip((gx, gs, gb), grads_order) if keep)

    return Tensor._result(out, parents, bw_packed, "layer_norm")


# -- finite-difference oracle ----------------------------------------------


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, eps: float = 1e-4, indices: Iterable | None = None) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``target.data``.

    Only forward evaluations are used.  With ``indices`` (flat positions) the
    other entries of the result are left at zero.
    """
    target.data = np.ascontiguousarray(target.data)
    flat = target.data.reshape(-1)
    grad = np.zeros_like(flat)
    positions = range(flat.size) if indices is None else indices
    with no_grad():
        for idx in positions:
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = fn().item()
            flat[idx] = orig - eps
            lo = fn().item()
            flat[idx] = orig
            grad[idx] = (hi - lo) / (2.0 * eps)
    return grad.reshape(target.shape)


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
