"""Dense float tensors with tape-based reverse-mode differentiation.

Every operation records a closure that maps the output gradient to the
gradients of its inputs.  ``Tensor.backward`` walks the recorded graph in
reverse topological order.  Values are numpy arrays; the storage dtype is
float32 unless a :func:`precision` block asks for float64.
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """An operand lies outside the domain of the operation."""


class ContractError(ValueError):
    """A caller violated an operation's calling contract."""


_state = {"dtype": np.float32, "grad": True}


@contextlib.contextmanager
def precision(dtype) -> Iterable[None]:
    """Temporarily change the storage dtype of newly created tensors."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad() -> Iterable[None]:
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def default_dtype():
    return _state["dtype"]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_state["dtype"])
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff --------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every participating tensor."""
        if grad is None:
            if self.size != 1:
                raise ContractError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones(self.shape, dtype=self.data.dtype)
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -------------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return min_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def expand(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return expand(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def abs(self):
        return abs_(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=_state["dtype"]) if data.dtype != _state["dtype"] else data
    out.grad = None
    out.name = None
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- elementwise -----------------------------------------------------------

def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sa) == len(sb) and sa[:-1] == sb[:-1] and (sa[-1] == 1 or sb[-1] == 1):
        return
    if len(sa) != len(sb):
        raise DimensionError(f"{op}: rank mismatch {sa} vs {sb}")
    axes = [i for i, (x, y) in enumerate(zip(sa, sb)) if x != y]
    raise DimensionError(f"{op}: shape mismatch on axes {axes}: {sa} vs {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    return g.sum(axis=-1, keepdims=True).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _result(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: zero in denominator")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), backward)


def _unary(x: Tensor, value: np.ndarray, local_grad: Callable[[], np.ndarray]) -> Tensor:
    def backward(g):
        return (g * local_grad(),)

    return _result(value, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda: out)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: non-positive operand")
    xd = x.data
    return _unary(x, np.log(xd), lambda: 1.0 / xd)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: negative operand")
    out = np.sqrt(x.data)
    return _unary(x, out, lambda: 0.5 / np.where(out > 0, out, np.inf))


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if exponent == 2:
        return _unary(x, xd * xd, lambda: 2.0 * xd)
    return _unary(x, xd**exponent, lambda: exponent * xd ** (exponent - 1))


def square(x) -> Tensor:
    return power(x, 2)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0).astype(x.data.dtype), lambda: mask)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _unary(x, out, lambda: out * (1.0 - out))


def abs_(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.abs(x.data), lambda: np.sign(x.data))


def sin(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.sin(x.data), lambda: np.cos(x.data))


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.cos(x.data), lambda: -np.sin(x.data))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``, NaN propagates."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_elementwise(a, b, "minimum")
    pick_a = (a.data <= b.data) | np.isnan(a.data)

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _result(np.where(pick_a, a.data, b.data), (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_elementwise(a, b, "maximum")
    pick_a = (a.data >= b.data) | np.isnan(a.data)

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _result(np.where(pick_a, a.data, b.data), (a, b), backward)


# -- reductions ------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum_(x, axes, keepdims), 1.0 / count)


def _extreme(x: Tensor, axis, keepdims, fn) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    kept = fn(x.data, axis=axes, keepdims=True)
    mask = x.data == kept
    share = mask / mask.sum(axis=axes, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axes)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * share,)

    return _result(np.asarray(out), (x,), backward)


def max_(x, axis=None, keepdims=False) -> Tensor:
    """Maximum along ``axis``; tied maxima share the gradient equally."""
    return _extreme(as_tensor(x), axis, keepdims, np.max)


def min_(x, axis=None, keepdims=False) -> Tensor:
    return _extreme(as_tensor(x), axis, keepdims, np.min)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


# -- shape manipulation ----------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(src),)

    return _result(out, (x,), backward)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def expand(x, shape) -> Tensor:
    """Explicit broadcast of size-1 axes to ``shape`` (ranks must agree)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.ndim != len(shape):
        raise DimensionError(f"expand: rank mismatch {x.shape} vs {shape}")
    bad = [i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t and s != 1]
    if bad:
        raise DimensionError(f"expand: axes {bad} are not singleton in {x.shape} -> {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)

    def backward(g):
        return (g.sum(axis=axes, keepdims=True),)

    return _result(np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref):
            raise DimensionError(f"concat: rank mismatch {ref} vs {t.shape}")
        bad = [i for i in range(len(ref)) if i != ax and t.shape[i] != ref[i]]
        if bad:
            raise DimensionError(f"concat: shape mismatch on axes {bad}: {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts], axis)


def index(x, key) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _result(np.ascontiguousarray(x.data[key]), (x,), backward)


def gather(x, flat_index: np.ndarray) -> Tensor:
    """out[...] = x.flat[flat_index[...]]; repeated indices accumulate on backward."""
    x = as_tensor(x)
    flat_index = np.asarray(flat_index, dtype=np.int64)
    n = x.size
    shape = x.shape

    def backward(g):
        acc = np.bincount(flat_index.reshape(-1), weights=g.reshape(-1), minlength=n)
        return (acc.astype(g.dtype).reshape(shape),)

    return _result(x.data.reshape(-1)[flat_index], (x,), backward)


def pad2d(x, width: int, mode: str = "zero") -> Tensor:
    """Pad the last two axes by ``width`` with zeros or reflection."""
    x = as_tensor(x)
    if width == 0:
        return x
    if mode == "zero":
        spec = [(0, 0)] * (x.ndim - 2) + [(width, width), (width, width)]
        src = tuple([slice(None)] * (x.ndim - 2) + [slice(width, -width), slice(width, -width)])

        def backward(g):
            return (np.ascontiguousarray(g[src]),)

        return _result(np.pad(x.data, spec), (x,), backward)
    if mode == "reflect":
        ids = np.arange(x.size).reshape(x.shape)
        spec = [(0, 0)] * (x.ndim - 2) + [(width, width), (width, width)]
        return gather(x, np.pad(ids, spec, mode="reflect"))
    raise ContractError(f"pad2d: unknown mode {mode!r}")


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands need rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner axes differ (axis {a.ndim - 1} of lhs = {a.shape[-1]}, "
            f"axis {b.ndim - 2} of rhs = {b.shape[-2]})"
        )
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ {a.shape[:-2]} vs {b.shape[:-2]}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), backward)


# -- convolution and resampling --------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [c,h,w] or [n,c,h,w] with weight [o,c,kh,kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d: input must be [c,h,w] or [n,c,h,w], got {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be [o,c,kh,kw], got {weight.shape}")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv2d: channel axis differs (input axis {x.ndim - 3} = {c}, weight axis 1 = {wc})")
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xd
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # columns laid out [c*kh*kw, n*oh*ow] so the spatial axis stays contiguous
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * oh * ow)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = wmat @ cols
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out += bias.data[:, None]
    out = out.reshape(o, n, oh, ow)
    out = out[:, 0] if not batched else np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(o, oh * ow) if not batched else g.transpose(1, 0, 2, 3).reshape(o, n * oh * ow)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, kh, kw, n, oh, ow)
            gp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, i, j].transpose(1, 0, 2, 3)
            if padding:
                gp = gp[:, :, padding:-padding, padding:-padding]
            gx = np.ascontiguousarray(gp if batched else gp[0])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return _result(out, parents, backward)


def avg_pool2(x) -> Tensor:
    """2x2 average pooling with stride 2 over the last two axes (odd edges dropped)."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise DimensionError(f"avg_pool2: spatial axes too small {x.shape}")
    lead = x.shape[:-2]
    crop = x.data[..., : 2 * h2, : 2 * w2]
    out = crop.reshape(lead + (h2, 2, w2, 2)).mean(axis=(-3, -1))
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        up = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        full[..., : 2 * h2, : 2 * w2] = up
        return (full,)

    return _result(out, (x,), backward)


def _bilinear_matrix(n: int) -> np.ndarray:
    """[2n, n] matrix for 2x linear upsampling with half-pixel centers."""
    m = np.zeros((2 * n, n))
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        src = min(max(src, 0.0), n - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def upsample2(x, mode: str = "nearest") -> Tensor:
    """2x upsampling of the last two axes."""
    x = as_tensor(x)
    if mode == "nearest":
        out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)
        lead = x.shape[:-2]
        h, w = x.shape[-2:]

        def backward(g):
            return (g.reshape(lead + (h, 2, w, 2)).sum(axis=(-3, -1)),)

        return _result(out, (x,), backward)
    if mode == "bilinear":
        h, w = x.shape[-2:]
        mh = _bilinear_matrix(h).astype(x.data.dtype)
        mw = _bilinear_matrix(w).astype(x.data.dtype)
        out = mh @ x.data @ mw.T

        def backward(g):
            return (mh.T @ g @ mw,)

        return _result(out, (x,), backward)
    raise ContractError(f"upsample2: unknown mode {mode!r}")


def unfold(features, window: int) -> Tensor:
    """Sliding d x d blocks: [c,h,w] -> [h,w,c,d*d], zero outside the image.

    Entry ``(y, x, :, j*d + i)`` holds ``features[:, y + j - r, x + i - r]``
    with ``r = (d - 1) // 2``.
    """
    x = as_tensor(features)
    if not isinstance(window, (int, np.integer)) or window < 1 or window % 2 == 0:
        raise ContractError(f"unfold: window must be a positive odd integer, got {window!r}")
    if x.ndim != 3 or x.size == 0:
        raise DimensionError(f"unfold: expected non-empty [c,h,w], got {x.shape}")
    d = int(window)
    r = (d - 1) // 2
    c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(xp, (d, d), axis=(1, 2))  # c,h,w,d,d
    out = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h, w, c, d * d)

    def backward(g):
        return (fold(g, d),)

    return _result(out, (x,), backward)


def fold(blocks: np.ndarray, window: int) -> np.ndarray:
    """Adjoint of :func:`unfold` on raw arrays: [h,w,c,d*d] -> [c,h,w]."""
    d = window
    r = (d - 1) // 2
    h, w, c, _ = blocks.shape
    g = blocks.reshape(h, w, c, d, d)
    acc = np.zeros((c, h + 2 * r, w + 2 * r), dtype=blocks.dtype)
    for j in range(d):
        for i in range(d):
            acc[:, j:j + h, i:i + w] += g[:, :, :, j, i].transpose(2, 0, 1)
    return np.ascontiguousarray(acc[:, r:r + h, r:r + w])


def grid_sample(image, coords) -> tuple[Tensor, Tensor]:
    """Bilinear lookup of image [c,h,w] at pixel coords [h',w',2] given as (x, y).

    A sample is valid when it lies inside ``[0, w-1] x [0, h-1]`` so that every
    neighbour carrying weight is in the image; invalid samples read 0.
    """
    img, crd = as_tensor(image), as_tensor(coords)
    if img.ndim != 3 or crd.ndim != 3 or crd.shape[-1] != 2:
        raise DimensionError(f"grid_sample: expected [c,h,w] and [h',w',2], got {img.shape} and {crd.shape}")
    c, h, w = img.shape
    x = crd.data[..., 0]
    y = crd.data[..., 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    valid &= np.isfinite(x) & np.isfinite(y)
    xs = np.where(valid, x, 0)
    ys = np.where(valid, y, 0)
    x0 = np.clip(np.floor(xs), 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(ys), 0, max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0).astype(img.data.dtype)
    fy = (ys - y0).astype(img.data.dtype)
    vm = valid.astype(img.data.dtype)

    flat = img.data.reshape(c, h * w)
    i00, i01, i10, i11 = y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1
    v00, v01, v10, v11 = flat[:, i00], flat[:, i01], flat[:, i10], flat[:, i11]
    w00 = (1 - fx) * (1 - fy) * vm
    w01 = fx * (1 - fy) * vm
    w10 = (1 - fx) * fy * vm
    w11 = fx * fy * vm
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def backward(g):
        gimg = None
        if img.requires_grad:
            offs = (np.arange(c) * (h * w))[:, None]
            total = np.zeros(c * h * w)
            for idx, wt in ((i00, w00), (i01, w01), (i10, w10), (i11, w11)):
                total += np.bincount((offs + idx.reshape(1, -1)).reshape(-1),
                                     weights=(g * wt).reshape(-1), minlength=c * h * w)
            gimg = total.astype(g.dtype).reshape(c, h, w)
        gcrd = None
        if crd.requires_grad:
            dx = ((v01 - v00) * (1 - fy) + (v11 - v10) * fy) * vm
            dy = ((v10 - v00) * (1 - fx) + (v11 - v01) * fx) * vm
            gcrd = np.stack([(g * dx).sum(axis=0), (g * dy).sum(axis=0)], axis=-1)
        return gimg, gcrd

    return _result(out, (img, crd), backward), Tensor(vm)


# -- gradient checking -----------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter_errors: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < 1e-3


def gradient_check(function: Callable, point, epsilon: float = 1e-6,
                   max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences in float64.

    ``point`` is a tensor or a sequence of tensors; ``function`` receives them
    positionally and must return a single-element tensor.  For each parameter
    the error is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`` using vector
    norms over the checked entries.  ``max_entries`` limits the number of
    probed coordinates per parameter (chosen with ``seed``).
    """
    if not (0 < epsilon <= 1e-2):
        raise ContractError(f"gradient_check: epsilon must lie in (0, 1e-2], got {epsilon}")
    points = [point] if isinstance(point, (Tensor, np.ndarray)) else list(point)
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        params = [Tensor(np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64), requires_grad=True)
                  for p in points]
        out = function(*params)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError(f"gradient_check: function must return a scalar tensor, got {getattr(out, 'shape', type(out))}")
        out.backward()
        errors = []
        for p in params:
            analytic = np.zeros(p.shape) if p.grad is None else p.grad.reshape(p.shape)
            flat_ids = np.arange(p.size)
            if max_entries is not None and p.size > max_entries:
                flat_ids = np.sort(rng.choice(p.size, size=max_entries, replace=False))
            numeric = np.empty(len(flat_ids))
            base = p.data.copy()
            with no_grad():
                for n, k in enumerate(flat_ids):
                    flat = p.data.reshape(-1)
                    flat[k] = base.reshape(-1)[k] + epsilon
                    f_plus = float(function(*params).data.reshape(-1)[0])
                    flat[k] = base.reshape(-1)[k] - epsilon
                    f_minus = float(function(*params).data.reshape(-1)[0])
                    flat[k] = base.reshape(-1)[k]
                    numeric[n] = (f_plus - f_minus) / (2 * epsilon)
            a = analytic.reshape(-1)[flat_ids]
            denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
            errors.append(float(np.linalg.norm(a - numeric) / denom))
    return GradCheckReport(max(errors) if errors else 0.0, errors)


# -- binary dump format ----------------------------------------------------

TENSOR_MAGIC = b"TNSR"


def dumps(tensor) -> bytes:
    arr = np.asarray(tensor.data if isinstance(tensor, Tensor) else tensor, dtype="<f4")
    head = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def loads(blob: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one tensor starting at ``offset``; returns it and the end offset."""
    if blob[offset:offset + 4] != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic at byte {offset}")
    (rank,) = struct.unpack_from("<I", blob, offset + 4)
    shape = struct.unpack_from(f"<{rank}I", blob, offset + 8)
    start = offset + 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    end = start + 4 * count
    if end > len(blob):
        raise ValueError("truncated tensor payload")
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
    return Tensor(arr.copy()), end


def save(path, tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensor))


def load(path) -> Tensor:
    with open(path, "rb") as fh:
        return loads(fh.read())[0]
