"""Define-by-run reverse-mode automatic differentiation on numpy arrays.

A small engine in the micrograd tradition: every operation records its parent
tensors and a vector-Jacobian closure on the output ``Tensor``; ``backward``
replays the closures in reverse creation order.  All data is float64.

Only the ops needed by this package are provided (dense/conv layers, the usual
pointwise nonlinearities, softmax/log-softmax, reductions, gather, clipping).
Externally computed forward passes (e.g. quantum-circuit simulators) hook into
the graph through :func:`custom`, supplying their own VJP.
"""
from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "GraphError", "no_grad", "is_grad_enabled",
    "tensor", "parameter", "custom", "gradients", "check_gradients",
    "GradCheckReport",
    "add", "sub", "mul", "div", "neg", "matmul", "affine",
    "relu", "sigmoid", "tanh", "exp", "log", "square", "absolute", "cbrt",
    "arctan", "clip", "minimum", "maximum",
    "softmax", "log_softmax", "tsum", "tmean", "reshape", "gather",
    "conv2d", "maxpool2d", "upsample_bilinear",
]

_COUNTER = itertools.count()


class ShapeError(ValueError):
    """An op received operands whose shapes violate its contract."""


class GraphError(RuntimeError):
    """Invalid use of the graph (e.g. backward from a non-scalar)."""


class _GradMode:
    enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (rollouts, evaluation)."""
    prev = _GradMode.enabled
    _GradMode.enabled = False
    try:
        yield
    finally:
        _GradMode.enabled = prev


def is_grad_enabled() -> bool:
    return _GradMode.enabled


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], None] | None = None
        self._seq = next(_COUNTER)

    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(ancestor) into each ancestor's ``.grad``.

        ``self`` must be scalar.  Grads of the reachable subgraph are reset
        first, so repeated calls do not mix results.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar, got shape {self.shape}")
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._seq not in nodes:
                nodes[t._seq] = t
                stack.extend(t._parents)
        order = sorted(nodes, reverse=True)
        for s in order:
            nodes[s].grad = None
        self.grad = np.ones_like(self.data)
        for s in order:
            t = nodes[s]
            if t._vjp is not None and t.grad is not None:
                t._vjp(t.grad)

    # operator sugar ----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, name: str | None = None) -> Tensor:
    return Tensor(data, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# ----------------------------------------------------------------------
# graph construction helpers


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(parents: Sequence[Tensor]) -> bool:
    return _GradMode.enabled and any(p.requires_grad or p._parents for p in parents)


def _node(data, parents: Sequence[Tensor], make_vjp) -> Tensor:
    out = Tensor(data)
    if _tracked(parents):
        out._parents = tuple(parents)
        out._vjp = make_vjp(out)
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.array(g)  # copy: g may alias a consumer's grad buffer
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def mk(out):
        def vjp(g):
            _acc(a, _unbroadcast(g, a.data.shape))
            _acc(b, _unbroadcast(g, b.data.shape))
        return vjp
    return _node(a.data + b.data, (a, b), mk)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def mk(out):
        def vjp(g):
            _acc(a, _unbroadcast(g, a.data.shape))
            _acc(b, _unbroadcast(-g, b.data.shape))
        return vjp
    return _node(a.data - b.data, (a, b), mk)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def mk(out):
        def vjp(g):
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
            _acc(b, _unbroadcast(g * a.data, b.data.shape))
        return vjp
    return _node(a.data * b.data, (a, b), mk)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def mk(out):
        def vjp(g):
            _acc(a, _unbroadcast(g / b.data, a.data.shape))
            _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        return vjp
    return _node(a.data / b.data, (a, b), mk)


def neg(a) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, -g)
        return vjp
    return _node(-a.data, (a,), mk)


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from e
    def mk(out):
        def vjp(g):
            A, B = a.data, b.data
            if A.ndim == 1 and B.ndim == 1:
                _acc(a, g * B)
                _acc(b, g * A)
            elif A.ndim == 2 and B.ndim == 2:
                _acc(a, g @ B.T)
                _acc(b, A.T @ g)
            elif A.ndim == 1:  # (k,) @ (k,n) -> (n,)
                _acc(a, B @ g)
                _acc(b, np.outer(A, g))
            else:  # (m,k) @ (k,) -> (m,)
                _acc(a, np.outer(g, B))
                _acc(b, A.T @ g)
        return vjp
    return _node(data, (a, b), mk)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with x of shape (B, k) or (k,), w (k, n), b (n,)."""
    x, w, b = _t(x), _t(w), _t(b)
    if w.ndim != 2 or b.ndim != 1 or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"affine: weight {w.shape} / bias {b.shape} mismatch")
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"affine: input {x.shape} does not match weight {w.shape}")
    data = x.data @ w.data + b.data
    def mk(out):
        def vjp(g):
            X, W = x.data, w.data
            if X.ndim == 1:
                _acc(x, W @ g)
                _acc(w, np.outer(X, g))
                _acc(b, g)
            else:
                _acc(x, g @ W.T)
                _acc(w, X.T @ g)
                _acc(b, g.sum(axis=0))
        return vjp
    return _node(data, (x, w, b), mk)


# ----------------------------------------------------------------------
# pointwise nonlinearities


def relu(a) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, g * (a.data > 0))
        return vjp
    return _node(np.maximum(a.data, 0.0), (a,), mk)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _t(a)
    y = _sigmoid_stable(a.data)
    def mk(out):
        def vjp(g):
            _acc(a, g * y * (1.0 - y))
        return vjp
    return _node(y, (a,), mk)


def tanh(a) -> Tensor:
    a = _t(a)
    y = np.tanh(a.data)
    def mk(out):
        def vjp(g):
            _acc(a, g * (1.0 - y * y))
        return vjp
    return _node(y, (a,), mk)


def exp(a) -> Tensor:
    a = _t(a)
    y = np.exp(a.data)
    def mk(out):
        def vjp(g):
            _acc(a, g * y)
        return vjp
    return _node(y, (a,), mk)


def log(a) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, g / a.data)
        return vjp
    return _node(np.log(a.data), (a,), mk)


def square(a) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, 2.0 * g * a.data)
        return vjp
    return _node(a.data * a.data, (a,), mk)


def absolute(a) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, g * np.sign(a.data))
        return vjp
    return _node(np.abs(a.data), (a,), mk)


def cbrt(a) -> Tensor:
    """Real cube root.  Derivative taken as 0 at x = 0 (it is unbounded there)."""
    a = _t(a)
    y = np.cbrt(a.data)
    def mk(out):
        def vjp(g):
            denom = 3.0 * y * y
            safe = np.where(denom == 0.0, 1.0, denom)
            _acc(a, np.where(denom == 0.0, 0.0, g / safe))
        return vjp
    return _node(y, (a,), mk)


def arctan(a) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, g / (1.0 + a.data * a.data))
        return vjp
    return _node(np.arctan(a.data), (a,), mk)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes where the input was inside the range."""
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, g * ((a.data >= lo) & (a.data <= hi)))
        return vjp
    return _node(np.clip(a.data, lo, hi), (a,), mk)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to the first argument."""
    a, b = _t(a), _t(b)
    take_a = a.data <= b.data
    def mk(out):
        def vjp(g):
            _acc(a, _unbroadcast(g * take_a, a.data.shape))
            _acc(b, _unbroadcast(g * ~take_a, b.data.shape))
        return vjp
    return _node(np.where(take_a, a.data, b.data), (a, b), mk)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    a, b = _t(a), _t(b)
    take_a = a.data >= b.data
    def mk(out):
        def vjp(g):
            _acc(a, _unbroadcast(g * take_a, a.data.shape))
            _acc(b, _unbroadcast(g * ~take_a, b.data.shape))
        return vjp
    return _node(np.where(take_a, a.data, b.data), (a, b), mk)


# ----------------------------------------------------------------------
# softmax family (last axis)


def softmax(a) -> Tensor:
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    def mk(out):
        def vjp(g):
            _acc(a, (g - (g * y).sum(axis=-1, keepdims=True)) * y)
        return vjp
    return _node(y, (a,), mk)


def log_softmax(a) -> Tensor:
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    def mk(out):
        def vjp(g):
            _acc(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))
        return vjp
    return _node(y, (a,), mk)


# ----------------------------------------------------------------------
# reductions / shape


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    def mk(out):
        def vjp(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg, a.data.shape))
        return vjp
    return _node(data, (a,), mk)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / data.size
    def mk(out):
        def vjp(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg, a.data.shape) / n)
        return vjp
    return _node(data, (a,), mk)


def reshape(a, shape) -> Tensor:
    a = _t(a)
    def mk(out):
        def vjp(g):
            _acc(a, g.reshape(a.data.shape))
        return vjp
    return _node(a.data.reshape(shape), (a,), mk)


def gather(a, index, axis: int = -1) -> Tensor:
    """``take_along_axis``; the VJP scatter-adds back (duplicates accumulate)."""
    a = _t(a)
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise ShapeError(f"gather: index dtype {idx.dtype} is not integral")
    data = np.take_along_axis(a.data, idx, axis=axis)
    def mk(out):
        def vjp(g):
            dx = np.zeros_like(a.data)
            grids = list(np.indices(g.shape, sparse=True))
            grids[axis] = np.broadcast_to(idx, g.shape)
            np.add.at(dx, tuple(grids), g)
            _acc(a, dx)
        return vjp
    return _node(data, (a,), mk)


# ----------------------------------------------------------------------
# 2-D image ops.  Layout is channels-last: (batch, height, width, channels).


def _pad_amount(n: int, k: int, s: int, padding: str) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for one spatial axis."""
    if padding == "valid":
        if n < k:
            raise ShapeError(f"conv2d: input size {n} smaller than kernel {k}")
        return (n - k) // s + 1, 0, 0
    if padding == "same":
        out = -(-n // s)  # ceil
        total = max((out - 1) * s + k - n, 0)
        before = total // 2
        return out, before, total - before
    raise ShapeError(f"conv2d: unknown padding {padding!r}")


def _window_view(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    B, H, W, C = x.shape
    oh = (H - kh) // sh + 1
    ow = (W - kw) // sw + 1
    sb, sr, sc, sc2 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (B, oh, ow, kh, kw, C), (sb, sr * sh, sc * sw, sr, sc, sc2),
        writeable=False)


def conv2d(x, w, b, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation), channels-last.

    x: (B, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,).
    'same' padding follows the asymmetric convention (extra pixel goes after).
    """
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input/kernel, got {x.shape}, {w.shape}")
    if x.data.shape[3] != w.data.shape[2]:
        raise ShapeError(f"conv2d: channels mismatch {x.shape} vs kernel {w.shape}")
    kh, kw, _, cout = w.data.shape
    if b.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {cout} filters")
    B, H, W, _ = x.data.shape
    oh, ph0, ph1 = _pad_amount(H, kh, stride, padding)
    ow, pw0, pw1 = _pad_amount(W, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0))) \
        if (ph0 or ph1 or pw0 or pw1) else x.data
    cols = _window_view(xp, kh, kw, stride, stride)
    data = np.tensordot(cols, w.data, axes=([3, 4, 5], [0, 1, 2])) + b.data

    def mk(out):
        def vjp(g):
            _acc(w, np.tensordot(cols, g, axes=([0, 1, 2], [0, 1, 2])))
            _acc(b, g.sum(axis=(0, 1, 2)))
            if x.requires_grad or x._parents:
                dcols = np.tensordot(g, w.data, axes=([3], [3]))
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i:i + oh * stride:stride,
                            j:j + ow * stride:stride, :] += dcols[:, :, :, i, j, :]
                _acc(x, dxp[:, ph0:ph0 + H, pw0:pw0 + W, :])
        return vjp
    return _node(data, (x, w, b), mk)


def maxpool2d(x, size: int) -> Tensor:
    """Non-overlapping max pooling (stride = size); trailing rows/cols that do
    not fill a window are dropped.  Ties route the gradient to the first max."""
    x = _t(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-D input, got {x.shape}")
    B, H, W, C = x.data.shape
    oh, ow = H // size, W // size
    if oh == 0 or ow == 0:
        raise ShapeError(f"maxpool2d: window {size} larger than input {x.shape}")
    win = _window_view(x.data[:, :oh * size, :ow * size, :], size, size, size, size)
    flat = win.reshape(B, oh, ow, size * size, C)
    arg = flat.argmax(axis=3)
    data = np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def mk(out):
        def vjp(g):
            dx = np.zeros_like(x.data)
            for k in range(size * size):
                i, j = divmod(k, size)
                dx[:, i:oh * size:size, j:ow * size:size, :] += g * (arg == k)
            _acc(x, dx)
        return vjp
    return _node(data, (x,), mk)


_INTERP_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _interp_matrix(n: int, factor: int) -> np.ndarray:
    """Row-stochastic (m x n) bilinear interpolation matrix, half-pixel centers."""
    key = (n, factor)
    A = _INTERP_CACHE.get(key)
    if A is None:
        m = n * factor
        A = np.zeros((m, n))
        for o in range(m):
            src = (o + 0.5) / factor - 0.5
            top = math.floor(src)
            frac = src - top
            i0 = min(max(top, 0), n - 1)
            i1 = min(max(top + 1, 0), n - 1)
            A[o, i0] += 1.0 - frac
            A[o, i1] += frac
        _INTERP_CACHE[key] = A
    return A


def upsample_bilinear(x, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor, channels-last 4-D input."""
    x = _t(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear: expected 4-D input, got {x.shape}")
    B, H, W, C = x.data.shape
    Ah = _interp_matrix(H, factor)
    Aw = _interp_matrix(W, factor)
    data = np.einsum("ih,bhwc->biwc", Ah, x.data, optimize=True)
    data = np.einsum("jw,biwc->bijc", Aw, data, optimize=True)

    def mk(out):
        def vjp(g):
            gg = np.einsum("jw,bijc->biwc", Aw, g, optimize=True)
            _acc(x, np.einsum("ih,biwc->bhwc", Ah, gg, optimize=True))
        return vjp
    return _node(data, (x,), mk)


# ----------------------------------------------------------------------
# external-op bridge


def custom(inputs: Sequence[Tensor], data: np.ndarray,
           vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Insert externally computed ``data`` into the graph.

    ``vjp(g)`` must return one cotangent array (or None) per entry of
    ``inputs``, in order.  Not called when grad recording is off.
    """
    inputs = tuple(inputs)
    def mk(out):
        def run(g):
            grads = vjp(g)
            for t, gt in zip(inputs, grads):
                if gt is not None:
                    _acc(t, gt)
        return run
    return _node(np.asarray(data, dtype=np.float64), inputs, mk)


# ----------------------------------------------------------------------
# gradient utilities


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Backward from ``loss``; return grads keyed like ``params`` (zeros if a
    parameter does not reach the loss)."""
    loss.backward()
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()}


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    max_errors: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_errors.values()) if self.max_errors else 0.0

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def __str__(self) -> str:
        lines = [f"gradient check (tol={self.tol:g}, fd step={self.eps:g})"]
        for k, v in sorted(self.max_errors.items()):
            mark = "ok " if v < self.tol else "BAD"
            lines.append(f"  [{mark}] {k:30s} max rel err {v:.3e}")
        lines.append(f"  worst: {self.worst:.3e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def check_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                    eps: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode grads of ``fn()`` against central finite differences.

    Error metric per element: |a - f| / max(|a|, |f|, 1).  ``fn`` must be a
    deterministic closure over ``params`` returning a scalar tensor.
    """
    loss = fn()
    analytic = gradients(loss, params)
    report = GradCheckReport(tol=tol, eps=eps)
    for name, p in params.items():
        a = analytic[name]
        worst = 0.0
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            ai = a.ravel()[i]
            err = abs(ai - fd) / max(abs(ai), abs(fd), 1.0)
            worst = max(worst, err)
        report.max_errors[name] = worst
    return report
