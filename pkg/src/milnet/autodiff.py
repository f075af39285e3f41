"""Reverse-mode automatic differentiation over dense numpy-backed tensors.

Only the operations the whole-image classification pipeline needs are
provided: elementwise arithmetic, activations, reductions, 2-d convolution,
max pooling, a descending sort with a recorded permutation, and the two
norms used by the regularized losses.

Graphs are built eagerly. Every operation links its output tensor back to
its operands together with a closure that scatters the output gradient onto
them, so a graph is an ordered record of executed operations in topological
order by construction. ``Tensor.backward`` walks that record exactly once,
in reverse, accumulating into ``Tensor.grad`` (shared operands therefore
receive the sum of their positional contributions). A graph is consumed by
the walk; a second ``backward`` on the same loss raises.

Float32 is the training default. Float64 exists for finite-difference
verification, where 32-bit rounding noise would drown the comparison.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from milnet import kernels

FLOAT_DTYPES = (np.float32, np.float64)


class GraphConsumedError(RuntimeError):
    """Raised when backward is called twice through the same graph."""


class Tensor:
    """Dense n-dimensional array plus the bookkeeping for backprop.

    ``data`` is always a row-major (C-order) float32 or float64 array.
    ``grad`` stays ``None`` until a backward pass deposits something.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        # scalar - tensor
        return add(neg(self), float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not provided; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __getitem__(self, key):
        if not isinstance(key, slice):
            raise TypeError("only contiguous slices of rank-1 tensors are supported")
        start, stop, step = key.indices(self.size)
        if step != 1:
            raise ValueError("strided slices are not supported")
        return slice1d(self, start, stop)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())


def parameter(data, dtype=np.float32) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


# -- graph plumbing ------------------------------------------------------


def _result(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: mixed dtypes {a.data.dtype.name} and {b.data.dtype.name}")


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss into every reachable trainable leaf.

    Raises on a non-scalar root, a non-finite loss value, a consumed graph,
    or non-finite leaf gradients after the walk.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphConsumedError("backward was already run through this graph")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"non-finite loss value {loss.item()!r}")

    # Deterministic iterative post-order over the recorded operations.
    order: list[Tensor] = []
    seen = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None:
            node._backward_fn()
    loss._consumed = True

    for node in order:
        if node.requires_grad and not node._parents and node.grad is not None:
            if not np.isfinite(node.grad).all():
                raise FloatingPointError("non-finite gradient on a leaf tensor")


# -- elementwise and reduction ops ---------------------------------------


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_dtype(a, b, "add")
        if a.data.shape != b.data.shape:
            raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
        out = _result(a.data + b.data, (a, b))
        if out.requires_grad:
            def _bw():
                if a.requires_grad:
                    _accumulate(a, out.grad)
                if b.requires_grad:
                    _accumulate(b, out.grad)
            out._backward_fn = _bw
        return out
    out = _result(a.data + a.data.dtype.type(b), (a,))
    if out.requires_grad:
        def _bw_scalar():
            _accumulate(a, out.grad)
        out._backward_fn = _bw_scalar
    return out


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_dtype(a, b, "mul")
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
        out = _result(a.data * b.data, (a, b))
        if out.requires_grad:
            def _bw():
                if a.requires_grad:
                    _accumulate(a, out.grad * b.data)
                if b.requires_grad:
                    _accumulate(b, out.grad * a.data)
            out._backward_fn = _bw
        return out
    s = a.data.dtype.type(b)
    out = _result(a.data * s, (a,))
    if out.requires_grad:
        def _bw_scalar():
            _accumulate(a, out.grad * s)
        out._backward_fn = _bw_scalar
    return out


def neg(a: Tensor) -> Tensor:
    out = _result(-a.data, (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, -out.grad)
        out._backward_fn = _bw
    return out


def sum_(a: Tensor) -> Tensor:
    out = _result(np.sum(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, np.broadcast_to(out.grad, a.data.shape))
        out._backward_fn = _bw
    return out


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = _result(np.sum(a.data) / n, (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, np.broadcast_to(out.grad / n, a.data.shape))
        out._backward_fn = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _result(np.maximum(a.data, 0), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad * (a.data > 0))
        out._backward_fn = _bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # overflow-free formulation for both signs
    z = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    out = _result(s, (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad * s * (1 - s))
        out._backward_fn = _bw
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError(f"log: non-positive input (min={a.data.min()!r}); clamp before taking logs")
    out = _result(np.log(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad / a.data)
        out._backward_fn = _bw
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero at clamped positions."""
    out = _result(np.clip(a.data, lo, hi), (a,))
    if out.requires_grad:
        inside = (a.data > lo) & (a.data < hi)
        def _bw():
            _accumulate(a, out.grad * inside)
        out._backward_fn = _bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = _result(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad.reshape(a.data.shape))
        out._backward_fn = _bw
    return out


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 1:
        raise ValueError(f"slice1d expects a rank-1 tensor, got shape {a.data.shape}")
    if not (0 <= start < stop <= a.data.size):
        raise ValueError(f"slice1d: empty or out-of-range slice [{start}:{stop}] of length {a.data.size}")
    out = _result(a.data[start:stop], (a,))
    if out.requires_grad:
        def _bw():
            buf = np.zeros_like(a.data)
            buf[start:stop] = out.grad
            _accumulate(a, buf)
        out._backward_fn = _bw
    return out


# -- structured ops -------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a (C_in, H, W) input with (C_out, C_in, kh, kw) kernels."""
    if x.data.ndim != 3 or weight.data.ndim != 4 or bias.data.ndim != 1:
        raise ValueError(
            f"conv2d: expected input rank 3, kernel rank 4, bias rank 1; "
            f"got {x.data.shape}, {weight.data.shape}, {bias.data.shape}"
        )
    cin, h, w = x.data.shape
    cout, kcin, kh, kw = weight.data.shape
    if kcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels but kernel expects {kcin}")
    if bias.data.shape[0] != cout:
        raise ValueError(f"conv2d: kernel has {cout} output channels but bias has {bias.data.shape[0]}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: invalid stride={stride} or pad={pad}")
    _check_same_dtype(x, weight, "conv2d")
    _check_same_dtype(x, bias, "conv2d")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} with stride {stride}, pad {pad} does not fit input {h}x{w}"
        )

    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(weight.data)
    bd = np.ascontiguousarray(bias.data)
    out = _result(kernels.conv2d_forward(xd, wd, bd, stride, pad), (x, weight, bias))
    if out.requires_grad:
        def _bw():
            gx, gw, gb = kernels.conv2d_backward(
                xd, wd, np.ascontiguousarray(out.grad), stride, pad, x.requires_grad
            )
            if x.requires_grad:
                _accumulate(x, gx)
            if weight.requires_grad:
                _accumulate(weight, gw)
            if bias.requires_grad:
                _accumulate(bias, gb)
        out._backward_fn = _bw
    return out


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Per-window max over a (C, H, W) input.

    The backward pass routes each window's gradient to the first maximal
    element in row-major scan order, so tie handling is deterministic.
    """
    if x.data.ndim != 3:
        raise ValueError(f"maxpool2d expects a rank-3 input, got shape {x.data.shape}")
    if k < 1 or stride < 1:
        raise ValueError(f"maxpool2d: window {k} and stride {stride} must both be >= 1")
    _, h, w = x.data.shape
    if h < k or w < k:
        raise ValueError(f"maxpool2d: window {k}x{k} does not fit input {h}x{w}")
    xd = np.ascontiguousarray(x.data)
    y, switches = kernels.maxpool2d_forward(xd, k, stride)
    out = _result(y, (x,))
    if out.requires_grad:
        def _bw():
            _accumulate(x, kernels.maxpool2d_backward(switches, np.ascontiguousarray(out.grad), h, w))
        out._backward_fn = _bw
    return out


def sort_desc(v: Tensor):
    """Sort a rank-1 tensor in non-increasing order.

    Returns (sorted tensor, permutation) with ``sorted[i] == v[perm[i]]``.
    Ties keep ascending original index. The backward pass scatters the
    incoming gradient through the recorded permutation unchanged.
    """
    if v.data.ndim != 1:
        raise ValueError(f"sort_desc expects a rank-1 tensor, got shape {v.data.shape}")
    if v.data.size == 0:
        raise ValueError("sort_desc: empty vector")
    perm = np.argsort(-v.data, kind="stable")
    out = _result(v.data[perm], (v,))
    if out.requires_grad:
        def _bw():
            buf = np.zeros_like(v.data)
            buf[perm] = out.grad
            _accumulate(v, buf)
        out._backward_fn = _bw
    return out, perm


def l1_norm(v: Tensor) -> Tensor:
    """Sum of absolute values (equals the plain sum for probability inputs)."""
    out = _result(np.sum(np.abs(v.data)), (v,))
    if out.requires_grad:
        def _bw():
            _accumulate(v, out.grad * np.sign(v.data))
        out._backward_fn = _bw
    return out


def l2_norm_sq(tensors: Iterable[Tensor]) -> Tensor:
    """Sum of squared entries across a fixed sequence of tensors."""
    ts = list(tensors)
    if not ts:
        raise ValueError("l2_norm_sq: empty tensor list")
    dtype = ts[0].data.dtype
    total = dtype.type(0)
    for t in ts:
        if t.data.dtype != dtype:
            raise ValueError("l2_norm_sq: mixed dtypes")
        total = total + np.sum(t.data * t.data)
    out = _result(np.asarray(total, dtype=dtype), tuple(ts))
    if out.requires_grad:
        def _bw():
            for t in ts:
                if t.requires_grad:
                    _accumulate(t, out.grad * 2 * t.data)
        out._backward_fn = _bw
    return out
