"""Dense tensors with reverse-mode automatic differentiation.

numpy supplies the array arithmetic; this module owns the computation
graph, gradient accumulation, and parameter bookkeeping. Training runs
at float32, gradient checking at float64. Broadcasting is deliberately
restricted to the trailing-axis bias case of ``add``; every other
elementwise op requires exact shape agreement, which keeps the
correctness surface small.

Graph recording can be suspended with ``no_grad()`` for evaluation and
finite-difference sweeps. Gradients of intermediate nodes live only for
the duration of a ``backward`` call; only leaf tensors that require
gradients (typically :class:`Parameter`) accumulate into ``.grad``, so
calling backward twice doubles leaf gradients exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, DomainError, GradientContractError

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense float32/float64 array plus its place in the backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _SUPPORTED_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backprop = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _op(data, parents, backprop):
        """Wrap an op result, recording the graph edge when grads are live."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backprop = backprop
        else:
            out.requires_grad = False
            out._parents = ()
            out._backprop = None
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    # -- reductions / shaping as methods ---------------------------------------

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A trainable tensor with a persistently allocated gradient buffer."""

    __slots__ = ("trainable",)

    def __init__(self, value, dtype=None, trainable=True):
        super().__init__(value, dtype=dtype, requires_grad=trainable)
        self.grad = np.zeros_like(self.data)
        self.trainable = bool(trainable)

    @property
    def value(self):
        return self.data

    def zero_grad(self):
        self.grad[...] = 0

    def set_trainable(self, flag: bool):
        self.trainable = bool(flag)
        self.requires_grad = self.trainable


def constant(data, dtype=None) -> Tensor:
    """A graph constant: never receives gradient."""
    return Tensor(data, dtype=dtype, requires_grad=False)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def _accumulate(store: dict, t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    tid = id(t)
    prev = store.get(tid)
    store[tid] = g if prev is None else prev + g


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss.

    Accumulates into ``.grad`` of every reachable leaf tensor with
    ``requires_grad`` set; intermediate gradients are discarded when the
    call returns. Raises if ``loss`` is not a scalar.
    """
    if loss.data.size != 1:
        raise GradientContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    # Iterative post-order topological sort; recursion would overflow on
    # deep graphs. Constants are pruned since no gradient flows to them.
    topo = []
    state = {}
    stack = [loss]
    while stack:
        node = stack[-1]
        nid = id(node)
        st = state.get(nid, 0)
        if st == 0:
            state[nid] = 1
            for p in node._parents:
                if p.requires_grad and state.get(id(p), 0) == 0:
                    stack.append(p)
        else:
            stack.pop()
            if st == 1:
                state[nid] = 2
                topo.append(node)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backprop is not None:
            node._backprop(g, grads)
        elif node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g


def zero_grads(params) -> None:
    """Zero the gradient buffers of an iterable (or dict) of parameters."""
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, opname: str):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}"
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a trailing-axis bias as ``b``."""
    bias_case = (
        b.data.ndim == 1
        and a.data.ndim > 1
        and a.data.shape[-1] == b.data.shape[0]
    )
    if not bias_case:
        _check_same_shape(a, b, "add")
    out = a.data + b.data

    def backprop(g, store):
        _accumulate(store, a, g)
        if bias_case:
            _accumulate(store, b, g.sum(axis=tuple(range(g.ndim - 1))))
        else:
            _accumulate(store, b, g)

    return Tensor._op(out, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def backprop(g, store):
        _accumulate(store, a, g)
        _accumulate(store, b, -g)

    return Tensor._op(out, (a, b), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def backprop(g, store):
        _accumulate(store, a, g * b.data)
        _accumulate(store, b, g * a.data)

    return Tensor._op(out, (a, b), backprop)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    out = a.data / b.data

    def backprop(g, store):
        _accumulate(store, a, g / b.data)
        _accumulate(store, b, -g * out / b.data)

    return Tensor._op(out, (a, b), backprop)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + a.data.dtype.type(s)

    def backprop(g, store):
        _accumulate(store, a, g)

    return Tensor._op(out, (a,), backprop)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    scale = a.data.dtype.type(s)
    out = a.data * scale

    def backprop(g, store):
        _accumulate(store, a, g * scale)

    return Tensor._op(out, (a,), backprop)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    return mul_scalar(a, s)


# ---------------------------------------------------------------------------
# transcendental / activation ops
# ---------------------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backprop(g, store):
        _accumulate(store, a, g * out)

    return Tensor._op(out, (a,), backprop)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    out = np.log(a.data)

    def backprop(g, store):
        _accumulate(store, a, g / a.data)

    return Tensor._op(out, (a,), backprop)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt requires non-negative input")
    out = np.sqrt(a.data)

    def backprop(g, store):
        _accumulate(store, a, g * 0.5 / out)

    return Tensor._op(out, (a,), backprop)


def sin(a: Tensor) -> Tensor:
    out = np.sin(a.data)

    def backprop(g, store):
        _accumulate(store, a, g * np.cos(a.data))

    return Tensor._op(out, (a,), backprop)


def cos(a: Tensor) -> Tensor:
    out = np.cos(a.data)

    def backprop(g, store):
        _accumulate(store, a, -g * np.sin(a.data))

    return Tensor._op(out, (a,), backprop)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backprop(g, store):
        _accumulate(store, a, g * (1.0 - out * out))

    return Tensor._op(out, (a,), backprop)


def gelu(a: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    x = a.data
    inner = _GELU_K * (x + _GELU_C * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backprop(g, store):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _accumulate(store, a, g * d)

    return Tensor._op(out, (a,), backprop)


# ---------------------------------------------------------------------------
# matrix product
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported shapes: (M,K)x(K,P), stacked (...,M,K)x(...,K,P) with equal
    leading dims, and (...,M,K)x(K,P) where the 2-D operand is shared
    across the stack (gradients for it sum over the stack).
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul requires operands of rank >= 2")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(
            f"matmul: inner dims disagree {ad.shape} vs {bd.shape}"
        )
    shared_rhs = bd.ndim == 2 and ad.ndim > 2
    if not shared_rhs and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(
            f"matmul: leading dims disagree {ad.shape} vs {bd.shape}"
        )
    out = ad @ bd

    def backprop(g, store):
        if a.requires_grad:
            _accumulate(store, a, g @ bd.swapaxes(-1, -2))
        if b.requires_grad:
            if shared_rhs:
                k = ad.shape[-1]
                p = g.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, p)
            else:
                gb = ad.swapaxes(-1, -2) @ g
            _accumulate(store, b, gb)

    return Tensor._op(out, (a, b), backprop)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax (max subtraction) along ``axis``."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backprop(g, store):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(store, a, out * (g - inner))

    return Tensor._op(out, (a,), backprop)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def backprop(g, store):
        _accumulate(store, a, g - sm * g.sum(axis=axis, keepdims=True))

    return Tensor._op(out, (a,), backprop)


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError("layer_norm: gain/bias must match trailing axis")
    if eps <= 0:
        raise DomainError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gain.data + bias.data

    def backprop(g, store):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            _accumulate(store, gain, (g * y).sum(axis=lead))
        if bias.requires_grad:
            _accumulate(store, bias, g.sum(axis=lead))
        if x.requires_grad:
            dy = g * gain.data
            m1 = dy.mean(axis=-1, keepdims=True)
            m2 = (dy * y).mean(axis=-1, keepdims=True)
            _accumulate(store, x, inv * (dy - m1 - y * m2))

    return Tensor._op(out, (x, gain, bias), backprop)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        expanded = list(g.shape)
        for ax in sorted(a % len(shape) for a in axes):
            expanded.insert(ax, 1)
        g = g.reshape(expanded)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backprop(g, store):
        _accumulate(store, a, _restore_axes(g, a.data.shape, axis, keepdims))

    return Tensor._op(np.asarray(out, dtype=a.data.dtype), (a,), backprop)


def mean_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backprop(g, store):
        scaled = g / a.data.dtype.type(count)
        _accumulate(store, a, _restore_axes(scaled, a.data.shape, axis, keepdims))

    return Tensor._op(np.asarray(out, dtype=a.data.dtype), (a,), backprop)


# ---------------------------------------------------------------------------
# shaping
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backprop(g, store):
        _accumulate(store, a, g.reshape(a.data.shape))

    return Tensor._op(out, (a,), backprop)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = a.data.transpose(axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backprop(g, store):
        _accumulate(store, a, g.transpose(inv))

    return Tensor._op(out, (a,), backprop)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backprop(g, store):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(store, t, g[tuple(idx)])

    return Tensor._op(out, tuple(tensors), backprop)


def slice_(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def backprop(g, store):
        buf = np.zeros_like(a.data)
        buf[key] = g
        _accumulate(store, a, buf)

    return Tensor._op(out, (a,), backprop)


def embedding_gather(weight: Tensor, indices) -> Tensor:
    """Select rows of a (V, D) table by integer index; scatter-add backward."""
    idx = np.asarray(indices)
    if weight.data.ndim != 2:
        raise DimensionError("embedding_gather expects a rank-2 table")
    out = weight.data[idx]

    def backprop(g, store):
        buf = np.zeros_like(weight.data)
        np.add.at(buf, idx, g)
        _accumulate(store, weight, buf)

    return Tensor._op(out, (weight,), backprop)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if not 0.0 <= p < 1.0:
        raise DomainError("dropout probability must be in [0, 1)")
    if p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def backprop(g, store):
        _accumulate(store, a, g * keep)

    return Tensor._op(a.data * keep, (a,), backprop)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with a trailing-axis bias."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out
