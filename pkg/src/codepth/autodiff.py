"""Small reverse-mode autodiff over float32 numpy arrays.

Every op produces a new :class:`Tensor` stamped with a monotonically
increasing sequence number.  Sorting the nodes reachable from a loss by that
number in descending order reproduces the execution tape in reverse, so
:func:`backward` visits each recorded op exactly once.

Only the op set needed by the depth/pose networks and the photometric losses
is provided.  Binary ops accept equal shapes or a size-1 operand; nothing
else broadcasts.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32

_counter = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the working float type (float64 for gradient checks)."""
    global DTYPE
    prev = DTYPE
    DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DTYPE = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._seq = next(_counter)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def __pow__(self, exponent: float):
        return power(self, exponent)


Operand = Union[Tensor, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap ``data`` as the result of an op with the given parents.

    ``backward`` maps the output gradient to one gradient (or ``None``) per
    parent, in order.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _lift(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full((), value, dtype=DTYPE))


def _check_pair(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, target: Tensor) -> np.ndarray:
    if grad.shape == target.shape:
        return grad
    # target was a size-1 operand broadcast over grad
    return np.asarray(grad.sum(dtype=np.float64), dtype=DTYPE).reshape(target.shape)


def _out_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if a.size == 1 and b.size == 1:
        return a.shape if len(a.shape) >= len(b.shape) else b.shape
    return b.shape if a.size == 1 else a.shape


def _scalarize(t: Tensor, out_shape: Tuple[int, ...]) -> np.ndarray:
    if t.shape == out_shape:
        return t.data
    return t.data.reshape(())


# --------------------------------------------------------------------------
# elementwise


def add(a: Operand, b: Operand) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check_pair(a, b, "add")
    shape = _out_shape(a, b)
    out = (_scalarize(a, shape) + _scalarize(b, shape)).reshape(shape)
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a: Operand, b: Operand) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check_pair(a, b, "sub")
    shape = _out_shape(a, b)
    out = (_scalarize(a, shape) - _scalarize(b, shape)).reshape(shape)
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a: Operand, b: Operand) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check_pair(a, b, "mul")
    shape = _out_shape(a, b)
    ad, bd = _scalarize(a, shape), _scalarize(b, shape)
    out = (ad * bd).reshape(shape)

    def backward(g):
        return (
            _unbroadcast(g * bd, a) if a.requires_grad else None,
            _unbroadcast(g * ad, b) if b.requires_grad else None,
        )

    return make_op(out, (a, b), backward)


def div(a: Operand, b: Operand) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check_pair(a, b, "div")
    shape = _out_shape(a, b)
    ad, bd = _scalarize(a, shape), _scalarize(b, shape)
    out = (ad / bd).reshape(shape)

    def backward(g):
        ga = _unbroadcast(g / bd, a) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), b) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** DTYPE(exponent)
    return make_op(out, (a,), lambda g: (g * DTYPE(exponent) * a.data ** DTYPE(exponent - 1),))


def absolute(a: Tensor) -> Tensor:
    # subgradient sign(0) = 0
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,))


def elementwise(kind: str, a: Operand, b: Operand) -> Tensor:
    """Dispatch a binary elementwise op by name (add, sub, mul, div)."""
    ops = {"add": add, "sub": sub, "mul": mul, "div": div}
    try:
        return ops[kind](a, b)
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None


# --------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, DTYPE(0)), (x,), lambda g: (g * mask,))


def elu(x: Tensor) -> Tensor:
    neg_part = np.expm1(np.minimum(x.data, 0))
    out = np.where(x.data > 0, x.data, neg_part).astype(DTYPE)
    deriv = np.where(x.data > 0, DTYPE(1), neg_part + 1).astype(DTYPE)
    return make_op(out, (x,), lambda g: (g * deriv,))


def sigmoid(x: Tensor) -> Tensor:
    out = (1.0 / (1.0 + np.exp(-x.data.astype(np.float64)))).astype(DTYPE)
    return make_op(out, (x,), lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data.astype(np.float64)
    out = (np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))).astype(DTYPE)
    s = (1.0 / (1.0 + np.exp(-xd))).astype(DTYPE)
    return make_op(out, (x,), lambda g: (g * s,))


def activation(kind: str, x: Tensor) -> Tensor:
    ops = {"relu": relu, "elu": elu, "sigmoid": sigmoid, "softplus": softplus}
    try:
        return ops[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# --------------------------------------------------------------------------
# reductions (accumulate in float64)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=DTYPE)
    return make_op(out, (x,), lambda g: (np.full(x.shape, g, dtype=DTYPE),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=DTYPE)
    return make_op(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=DTYPE),))


def reduce(kind: str, x: Tensor) -> Tensor:
    if kind == "sum":
        return sum_all(x)
    if kind == "mean":
        return mean_all(x)
    raise ValueError(f"unknown reduction {kind!r}")


def mean_axes(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    """Mean over ``axes`` keeping dims (used for global average pooling)."""
    n = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=True, dtype=np.float64).astype(DTYPE)
    return make_op(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).astype(DTYPE),))


# --------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index], dtype=x.data.dtype)

    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return make_op(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_op(out, tensors, backward)


# --------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, N×C×H×W input, O×C×k×k kernel, zero padding."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {kc}")
    if kh != kw:
        raise ShapeError("conv2d: only square kernels are supported")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    k, s, p = kh, stride, padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} too large for input {h}x{w} with padding {p}")
    cols = np.empty((c, k, k, n, ho, wo), dtype=DTYPE)
    xpt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xpt[:, :, i : i + s * ho : s, j : j + s * wo : s]
    cols = cols.reshape(c * k * k, n * ho * wo)
    wmat = kernel.data.reshape(o, c * k * k)
    out = np.ascontiguousarray((wmat @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gk = (gmat @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gmat).reshape(c, k, k, n, ho, wo)
            gxp = np.zeros((c, n) + xp.shape[2:], dtype=DTYPE)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols[:, i, j]
            gx = gxp.transpose(1, 0, 2, 3)
            gx = gx[:, :, p : p + h, p : p + w] if p else gx
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE))
        return grads

    return make_op(out, parents, backward)


def box_filter3(x: Tensor) -> Tensor:
    """3×3 uniform mean filter, stride 1, no padding (output shrinks by 2)."""
    n, c, h, w = x.shape
    if h < 3 or w < 3:
        raise ShapeError(f"box_filter3: input {h}x{w} smaller than the window")
    xd = x.data.astype(np.float64)
    out = sliding_window_view(xd, (3, 3), axis=(2, 3)).mean(axis=(-1, -2)).astype(DTYPE)

    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        g9 = g / DTYPE(9)
        for i in range(3):
            for j in range(3):
                full[:, :, i : i + h - 2, j : j + w - 2] += g9
        return (full,)

    return make_op(out, (x,), backward)


# --------------------------------------------------------------------------
# resampling


def _resize_weights(src: int, dst: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # align_corners=False: source coordinate of output i is (i + 0.5) * src/dst - 0.5
    scale = src / dst
    coord = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coord - lo
    return lo, hi, frac


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    lo, hi, frac = _resize_weights(src, dst)
    m = np.zeros((dst, src), dtype=np.float64)
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(DTYPE)


def resize_bilinear(x: Tensor, new_h: int, new_w: int) -> Tensor:
    """Bilinear resize of an N×C×H×W tensor (align-corners-false convention)."""
    if new_h <= 0 or new_w <= 0:
        raise ValueError(f"resize_bilinear: target size must be positive, got {new_h}x{new_w}")
    if x.data.ndim != 4:
        raise ShapeError(f"resize_bilinear: expected N×C×H×W, got {x.shape}")
    _, _, h, w = x.shape
    if (h, w) == (new_h, new_w):
        return make_op(x.data.copy(), (x,), lambda g: (g,))
    mh = _interp_matrix(h, new_h)  # new_h × h
    mw = _interp_matrix(w, new_w)  # new_w × w
    out = np.einsum("ih,nchw,jw->ncij", mh, x.data, mw, optimize=True).astype(DTYPE)

    def backward(g):
        return (np.einsum("ih,ncij,jw->nchw", mh, g, mw, optimize=True).astype(DTYPE),)

    return make_op(out, (x,), backward)


def bilinear_gather(img: Tensor, xs: Tensor, ys: Tensor) -> Tuple[Tensor, np.ndarray]:
    """Sample a 1×C×H×W image at per-pixel coordinates ``xs``, ``ys`` (1×1×h×w).

    Returns the sampled 1×C×h×w tensor and a boolean in-bounds mask.  A sample
    is in bounds when its whole 2×2 neighbourhood lies inside the image, i.e.
    ``0 <= x <= W-1`` and ``0 <= y <= H-1``; out-of-bounds samples are 0 and
    carry no gradient.
    """
    vals, valid, parts = gather_numpy(img.data[0], xs.data[0, 0], ys.data[0, 0])
    x0, y0, x1, y1, fx, fy = parts
    out = vals[None].astype(DTYPE)
    src = img.data[0]

    def backward(g):
        g = g[0].astype(np.float64) * valid  # C×h×w
        gimg = gx = gy = None
        if img.requires_grad:
            c, h, w = src.shape
            acc = np.zeros(c * h * w, dtype=np.float64)
            for yy, xx, wgt in (
                (y0, x0, (1 - fx) * (1 - fy)),
                (y0, x1, fx * (1 - fy)),
                (y1, x0, (1 - fx) * fy),
                (y1, x1, fx * fy),
            ):
                flat = (np.arange(c)[:, None, None] * (h * w) + yy * w + xx).ravel()
                acc += np.bincount(flat, weights=(g * wgt).ravel(), minlength=c * h * w)
            gimg = acc.reshape(1, c, h, w).astype(DTYPE)
        if xs.requires_grad or ys.requires_grad:
            s = src.astype(np.float64)
            v00, v01 = s[:, y0, x0], s[:, y0, x1]
            v10, v11 = s[:, y1, x0], s[:, y1, x1]
            if xs.requires_grad:
                dx = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
                gx = (g * dx).sum(axis=0)[None, None].astype(DTYPE)
            if ys.requires_grad:
                dy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx
                gy = (g * dy).sum(axis=0)[None, None].astype(DTYPE)
        return gimg, gx, gy

    return make_op(out, (img, xs, ys), backward), valid


def gather_numpy(src: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear lookup into a C×H×W array at float coordinates (float64 math).

    Shared by the differentiable sampler and the scene generator so both
    produce identical values for identical coordinates.
    """
    c, h, w = src.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1) & np.isfinite(xs) & np.isfinite(ys)
    xc = np.where(valid, xs, 0.0)
    yc = np.where(valid, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    s = src.astype(np.float64)
    vals = (
        s[:, y0, x0] * (1 - fx) * (1 - fy)
        + s[:, y0, x1] * fx * (1 - fy)
        + s[:, y1, x0] * (1 - fx) * fy
        + s[:, y1, x1] * fx * fy
    )
    vals = vals * valid
    return vals, valid, (x0, y0, x1, y1, fx, fy)


# --------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf tensor reachable from ``loss``.

    Leaf gradients accumulate (``+=``) until cleared, as with most frameworks.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: Dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(DTYPE) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE).reshape(parent.shape)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------------
# parameters and optimizer

ParamSet = "OrderedDict[str, Tensor]"


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: "OrderedDict[str, Tensor]", state: AdamState) -> None:
    """Bias-corrected Adam update in place; gradients are cleared afterwards."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for parameter(s): {', '.join(missing)}")
    state.t += 1
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    c1 = DTYPE(1.0 - state.beta1 ** state.t)
    c2 = DTYPE(1.0 - state.beta2 ** state.t)
    lr, eps = DTYPE(state.lr), DTYPE(state.eps)
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def sgd_step(params: "OrderedDict[str, Tensor]", lr: float) -> None:
    for p in params.values():
        if p.grad is not None:
            p.data -= DTYPE(lr) * p.grad
        p.grad = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# --------------------------------------------------------------------------
# checkpoint files
#
# layout (little-endian):
#   magic b"CODEPTH\0", u32 version
#   tensor section "params":  u32 count, then per tensor
#       u32 name length, name bytes (utf-8), u32 rank, u32 dims[rank], f32 payload
#   u32 has_optimizer; if 1: u64 t, f64 lr, beta1, beta2, eps, then two tensor
#       sections (first moments, second moments) keyed by parameter name

MAGIC = b"CODEPTH\0"
VERSION = 1


def _write_section(buf: List[bytes], tensors: "OrderedDict[str, np.ndarray]") -> None:
    buf.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf.append(struct.pack("<I", len(raw)))
        buf.append(raw)
        buf.append(struct.pack("<I", arr.ndim))
        buf.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.append(arr.tobytes())


def _read_section(data: bytes, pos: int) -> Tuple["OrderedDict[str, np.ndarray]", int]:
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).astype(DTYPE)
        pos += 4 * n
        out[name] = arr
    return out, pos


def save_checkpoint(path, params: "OrderedDict[str, Tensor]", state: Optional[AdamState] = None) -> None:
    buf: List[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    _write_section(buf, OrderedDict((k, p.data) for k, p in params.items()))
    if state is None:
        buf.append(struct.pack("<I", 0))
    else:
        buf.append(struct.pack("<I", 1))
        buf.append(struct.pack("<Q", state.t))
        buf.append(struct.pack("<4d", state.lr, state.beta1, state.beta2, state.eps))
        names = [k for k in params if k in state.m]
        _write_section(buf, OrderedDict((k, state.m[k]) for k in names))
        _write_section(buf, OrderedDict((k, state.v[k]) for k in names))
    with open(path, "wb") as fh:
        fh.write(b"".join(buf))


def load_checkpoint(path) -> Tuple["OrderedDict[str, np.ndarray]", Optional[AdamState]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    params, pos = _read_section(data, pos)
    (has_opt,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = None
    if has_opt:
        (t,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        lr, b1, b2, eps = struct.unpack_from("<4d", data, pos)
        pos += 32
        m, pos = _read_section(data, pos)
        v, pos = _read_section(data, pos)
        state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=dict(m), v=dict(v))
    return params, state
