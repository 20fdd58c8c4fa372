"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array together with an optional gradient
buffer and a record of the operation that produced it. Calling
:meth:`Tensor.backward` on a scalar replays those records in reverse
topological order and accumulates gradients into every ``requires_grad``
leaf. Gradients through a value used several times add up.

Conventions, fixed here so tests can rely on them:

* broadcasting aligns trailing dimensions only (numpy semantics); there are
  no implicit reshapes,
* two element precisions exist: float32 for training throughput and float64
  for gradient checks and loss oracles,
* division by zero, ``log`` of a non-positive value and ``sqrt`` of a
  negative value are hard errors rather than NaN propagation,
* the subgradient of ``abs`` at 0 is 0, and ``clamp`` passes gradient on the
  closed interval ``[lo, hi]``.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values are outside the operation's valid domain."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """n-dimensional array node in a reverse-mode differentiation graph.

    Data is immutable by convention after creation; only the ``grad`` buffer
    is written to, by :meth:`backward`. A tensor produced by an operation
    keeps references to its parents and a closure that maps the incoming
    output gradient to per-parent gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- graph -------------------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple, backward_fn: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    def backward(self) -> None:
        """Populate gradients of every ``requires_grad`` leaf below ``self``.

        ``self`` must be a scalar. Gradients accumulate additively into
        ``.grad``, both across multiple uses within the graph and across
        repeated ``backward`` calls.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, shape is {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def abs(self):
        return abs_(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return square(self)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce_max(self, axes, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=dtype)


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed precisions {a.dtype} and {b.dtype}; cast explicitly")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype(a, b, "add")
    _check_broadcast(a, b, "add")
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype(a, b, "sub")
    _check_broadcast(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype(a, b, "mul")
    _check_broadcast(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(data, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype(a, b, "div")
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: denominator contains zero")
    data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(data, (a, b), backward)


def abs_(a: Tensor) -> Tensor:
    data = np.abs(a.data)
    sign = np.sign(a.data)  # sign(0) = 0: bounded subgradient where inputs coincide

    def backward(g):
        return (g * sign,)

    return Tensor._result(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return Tensor._result(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")
    data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return Tensor._result(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt: input must be nonnegative")
    data = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / data),)

    return Tensor._result(data, (a,), backward)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def backward(g):
        return (g * (2.0 * a.data),)

    return Tensor._result(data, (a,), backward)


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    if lo is None and hi is None:
        raise ValueError("clamp: provide at least one bound")
    data = np.clip(a.data, lo, hi)

    def backward(g):
        if lo is not None and hi is not None:
            keep = (a.data >= lo) & (a.data <= hi)
        elif lo is not None:
            keep = a.data >= lo
        else:
            keep = a.data <= hi
        return (g * keep,)

    return Tensor._result(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._result(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    return clamp(a, lo=0.0)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "abs": abs_,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "clamp": clamp,
}


def elementwise(kind: str, a: Tensor, b=None, **kwargs) -> Tensor:
    """Dispatch an elementwise operation by name."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    if b is None:
        return fn(a, **kwargs)
    return fn(a, b, **kwargs)


# -- shape ops -------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor._result(data, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {a.shape}")
    data = a.data.T.copy()

    def backward(g):
        return (g.T.copy(),)

    return Tensor._result(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(sizes)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return Tensor._result(data, tuple(tensors), backward)


# -- reductions ------------------------------------------------------------


def _normalize_axes(a: Tensor, axes) -> tuple:
    if axes is None:
        return tuple(range(a.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    norm = tuple(ax + a.ndim if ax < 0 else ax for ax in axes)
    for ax in norm:
        if not 0 <= ax < a.ndim:
            raise ValueError(f"reduce: axis {ax} invalid for shape {a.shape}")
    if len(set(norm)) != len(norm):
        raise ValueError(f"reduce: repeated axes {axes}")
    return norm


def _restore_dims(g: np.ndarray, shape: tuple, axes: tuple) -> np.ndarray:
    expanded = list(g.shape)
    for ax in sorted(axes):
        expanded.insert(ax, 1)
    return g.reshape(expanded)


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(a, axes)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = _restore_dims(g, a.shape, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(np.asarray(data, dtype=a.dtype), (a,), backward)


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(a, axes)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = _restore_dims(g, a.shape, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=True),)

    return Tensor._result(np.asarray(data, dtype=a.dtype), (a,), backward)


def reduce_max(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(a, axes)
    data = a.data.max(axis=axes, keepdims=keepdims)
    full = a.data.max(axis=axes, keepdims=True)
    mask = (a.data == full)
    ties = mask.sum(axis=axes, keepdims=True)

    def backward(g):
        if not keepdims:
            g = _restore_dims(g, a.shape, axes)
        # distribute evenly across ties; callers avoid ties where gradients matter
        return ((mask * (g / ties)).astype(a.dtype),)

    return Tensor._result(np.asarray(data, dtype=a.dtype), (a,), backward)


REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(a: Tensor, axes, kind: str, keepdims: bool = False) -> Tensor:
    try:
        fn = REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduce kind {kind!r}") from None
    return fn(a, axes, keepdims)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    _check_same_dtype(a, b, "matmul")
    data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(data, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``.

    The axis max is subtracted before exponentiation; since softmax is shift
    invariant, treating that max as a constant leaves the gradient exact.
    """
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._result(out, (a,), backward)


# -- convolution and spatial ops -------------------------------------------


def _conv_spans(n: int, k: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of ``x`` (b,c,h,w) with kernels ``w`` (o,c,kh,kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    b, c, h, ww = x.shape
    o, ck, kh, kw = w.shape
    if ck != c:
        raise ShapeError(f"conv2d: kernel expects {ck} channels, input has {c}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be nonnegative, got {padding}")
    if h + 2 * padding < kh or ww + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{ww + 2 * padding}"
        )
    _check_same_dtype(x, w, "conv2d")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = _conv_spans(h, kh, padding, stride)
    wo = _conv_spans(ww, kw, padding, stride)
    s0, s1, s2, s3 = xp.strides
    cols = as_strided(
        xp,
        shape=(b, ho, wo, c, kh, kw),
        strides=(s0, s2 * stride, s3 * stride, s1, s2, s3),
    )
    # one contiguous copy puts the patch matrix in BLAS-friendly layout
    cols2d = cols.reshape(b * ho * wo, c * kh * kw)
    w2d = w.data.reshape(o, c * kh * kw)
    data = (cols2d @ w2d.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gw = None
        gx = None
        g2d = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        if w.requires_grad:
            gw = (g2d.T @ cols2d).reshape(o, c, kh, kw)
        if x.requires_grad:
            gcols = (g2d @ w2d).reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, i, j, :, :
                    ]
            gx = gxp[:, :, padding : padding + h, padding : padding + ww]
            if padding:
                gx = gx.copy()
        return gx, gw

    return Tensor._result(np.ascontiguousarray(data), (x, w), backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pooling by an integer factor; spatial dims must divide."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: expected 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if factor < 1:
        raise ValueError(f"avg_pool2d: factor must be positive, got {factor}")
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool2d: spatial dims {h}x{w} not divisible by {factor}")
    data = x.data.reshape(b, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g):
        g = g / (factor * factor)
        g = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (g.astype(x.dtype, copy=False),)

    return Tensor._result(data.astype(x.dtype, copy=False), (x,), backward)


def bilinear_matrix(n_out: int, n_in: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic interpolation matrix R with (R @ v)[i] = v resampled at i.

    Output sample i reads the continuous input coordinate
    ``(i + 0.5) * n_in / n_out - 0.5`` clamped to ``[0, n_in - 1]`` and blends
    the two nearest input samples linearly. Rows sum to 1, so constants are
    preserved exactly.
    """
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        pos = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n_in - 1)
        frac = pos - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize (b,c,h,w) spatially to (out_h, out_w) with bilinear interpolation."""
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample: expected 4-d input, got {x.shape}")
    _, _, h, w = x.shape
    rows = bilinear_matrix(out_h, h, dtype=x.dtype)
    colsT = bilinear_matrix(out_w, w, dtype=x.dtype).T
    data = np.einsum("oh,bchw,wp->bcop", rows, x.data, colsT, optimize=True)

    def backward(g):
        gx = np.einsum("ho,bcop,pw->bchw", rows.T, g, colsT.T, optimize=True)
        return (gx.astype(x.dtype, copy=False),)

    return Tensor._result(data.astype(x.dtype, copy=False), (x,), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple, eps: float):
    """Normalize over ``axes`` with the batch's own statistics, then scale/shift.

    gamma/beta are broadcast over the reduced axes. Returns
    ``(out, mean, var)`` with the biased batch statistics as plain arrays so
    callers can maintain running buffers without extra passes.
    """
    mu = x.data.mean(axis=axes, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    shape = mu.shape
    gdata = gamma.data.reshape(shape)
    data = xhat * gdata + beta.data.reshape(shape)
    n = 1
    for ax in axes:
        n *= x.shape[ax]

    def backward(g):
        dbeta = g.sum(axis=axes).reshape(beta.shape) if beta.requires_grad else None
        dgamma = (g * xhat).sum(axis=axes).reshape(gamma.shape) if gamma.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gdata
            dx = (inv / n) * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            dx = dx.astype(x.dtype, copy=False)
        return dx, dgamma, dbeta

    out = Tensor._result(data.astype(x.dtype, copy=False), (x, gamma, beta), backward)
    return out, mu, var


# -- verification ----------------------------------------------------------


def grad_check(
    f: Callable[..., Tensor],
    inputs: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients of scalar ``f(*inputs)`` to central differences.

    Returns the maximum over all elements of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``. A NaN in
    either gradient reports as ``inf``. Temporarily perturbs input data in
    place; intended for float64 test harnesses only.
    """
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    out.backward()

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = f(*inputs).item()
            flat[idx] = orig - eps
            lo = f(*inputs).item()
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = float(analytic.reshape(-1)[idx])
            if math.isnan(a) or math.isnan(numeric):
                return math.inf
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# -- constructors ----------------------------------------------------------


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))
