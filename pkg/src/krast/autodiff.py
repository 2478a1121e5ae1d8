"""Dense tensors with reverse-mode automatic differentiation.

A small tape engine backed by numpy. Operations executed while a
:class:`GradContext` is active record a computation graph; ``ctx.backward``
walks it once and returns a gradient map keyed by parameter name. Frozen
parameters never receive gradients but gradients still flow *through* any
computation that uses them.

Storage is float32 by default; float64 is used for finite-difference
gradient checking, where 32-bit tolerances are unreliable. Broadcasting is
restricted to leading-batch expansion (one operand's shape must be a
trailing suffix of the other's); anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import threading
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, ShapeError, UsageError

ArrayLike = Union["Tensor", np.ndarray, float, int, list]

LAYER_NORM_EPS = 1e-5
_L2_EPS = 1e-12

# tanh-approximation GELU constants
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


class _Node:
    """One recorded operation: edges to parents that require gradients."""

    __slots__ = ("edges", "ctx")

    def __init__(self, edges, ctx):
        self.edges = edges  # list of (parent Tensor, vjp callable)
        self.ctx = ctx


class Tensor:
    """Dense numeric array, optionally part of a recorded graph."""

    __slots__ = ("data", "requires_grad", "_node")

    def __init__(self, data: ArrayLike, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = False
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """The raw value, detached from any graph (copy)."""
        return np.array(self.data, copy=True)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    # operator sugar; all defined in terms of the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Parameter(Tensor):
    """A named leaf tensor. Frozen parameters never accumulate gradients."""

    __slots__ = ("name", "frozen")

    def __init__(self, data: ArrayLike, name: str, frozen: bool = False, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.frozen = frozen
        self.requires_grad = not frozen

    def __repr__(self):
        tag = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.shape}, {tag})"


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def _active() -> Optional["GradContext"]:
    s = _stack()
    return s[-1] if s else None


class GradContext:
    """Records the operation graph of one forward evaluation.

    Use as a context manager around the forward pass, then call
    :meth:`backward` exactly once with the scalar loss. The returned map
    contains a gradient for every non-frozen parameter touched during the
    evaluation (all-zero if the loss does not depend on it); frozen
    parameters are absent.
    """

    def __init__(self):
        self._touched: dict[str, Parameter] = {}
        self._done = False

    def __enter__(self) -> "GradContext":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar loss; one call per context."""
        if self._done:
            raise UsageError("backward already called on this GradContext")
        if loss.data.size != 1:
            raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss._node is not None and loss._node.ctx is not self:
            raise UsageError("loss was not produced under this GradContext")
        self._done = True

        grads = {
            name: np.zeros_like(p.data) for name, p in self._touched.items()
        }
        if isinstance(loss, Parameter) and not loss.frozen:
            grads[loss.name] = grads.get(loss.name, np.zeros_like(loss.data)) + 1.0
            return grads
        if loss._node is None:
            return grads

        order = self._topo(loss._node)
        node_grad: dict[int, np.ndarray] = {
            id(loss._node): np.ones_like(loss.data)
        }
        for node in order:
            g = node_grad.pop(id(node), None)
            if g is None:
                continue
            for parent, vjp in node.edges:
                pg = vjp(g)
                if isinstance(parent, Parameter):
                    grads[parent.name] += pg
                elif parent._node is not None:
                    key = id(parent._node)
                    if key in node_grad:
                        node_grad[key] += pg
                    else:
                        node_grad[key] = pg
        return grads

    @staticmethod
    def _topo(root: _Node) -> list:
        """Reverse topological order, iterative to spare the recursion limit."""
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node.edges:
                if parent._node is not None and id(parent._node) not in seen:
                    stack.append((parent._node, False))
        order.reverse()
        return order


def backward(loss: Tensor, ctx: GradContext) -> dict[str, np.ndarray]:
    """Convenience wrapper: ``ctx.backward(loss)``."""
    return ctx.backward(loss)


# ---------------------------------------------------------------------------
# op plumbing


def _as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(out_data: np.ndarray, parents_vjps, op: str) -> Tensor:
    """Wrap an op result, recording a graph node if a context is active."""
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out._node = None
    out.requires_grad = False
    ctx = _active()
    if ctx is None:
        return out
    edges = []
    for parent, vjp in parents_vjps:
        if not parent.requires_grad:
            continue
        edges.append((parent, vjp))
        if isinstance(parent, Parameter):
            ctx._touched.setdefault(parent.name, parent)
    if edges:
        out.requires_grad = True
        out._node = _Node(edges, ctx)
    return out


def _suffix_ok(a_shape: tuple, b_shape: tuple) -> bool:
    """True if one shape is a trailing suffix of the other (incl. scalars)."""
    if len(a_shape) == len(b_shape):
        return a_shape == b_shape
    short, long_ = sorted((a_shape, b_shape), key=len)
    return long_[len(long_) - len(short):] == short


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over broadcast leading axes back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if not _suffix_ok(a.shape, b.shape):
        raise ShapeError("add", a.shape, b.shape)
    out = a.data + b.data
    return _make(out, [
        (a, lambda g: _reduce_to(g, a.shape)),
        (b, lambda g: _reduce_to(g, b.shape)),
    ], "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if not _suffix_ok(a.shape, b.shape):
        raise ShapeError("sub", a.shape, b.shape)
    out = a.data - b.data
    return _make(out, [
        (a, lambda g: _reduce_to(g, a.shape)),
        (b, lambda g: _reduce_to(-g, b.shape)),
    ], "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if not _suffix_ok(a.shape, b.shape):
        raise ShapeError("mul", a.shape, b.shape)
    out = a.data * b.data
    ad, bd = a.data, b.data
    return _make(out, [
        (a, lambda g: _reduce_to(g * bd, a.shape)),
        (b, lambda g: _reduce_to(g * ad, b.shape)),
    ], "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if not _suffix_ok(a.shape, b.shape):
        raise ShapeError("div", a.shape, b.shape)
    out = a.data / b.data
    ad, bd = a.data, b.data
    return _make(out, [
        (a, lambda g: _reduce_to(g / bd, a.shape)),
        (b, lambda g: _reduce_to(-g * ad / (bd * bd), b.shape)),
    ], "div")


def exp(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _make(out, [(x, lambda g: g * out)], "exp")


def log(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    out = np.log(x.data)
    xd = x.data
    return _make(out, [(x, lambda g: g / xd)], "log")


def power(x: ArrayLike, p: float) -> Tensor:
    """Elementwise ``x**p`` for a constant exponent."""
    x = _as_tensor(x)
    out = np.power(x.data, p)
    xd = x.data
    return _make(out, [(x, lambda g: g * p * np.power(xd, p - 1.0))], "power")


def clamp_min(x: ArrayLike, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    x = _as_tensor(x)
    out = np.maximum(x.data, floor)
    mask = (x.data > floor).astype(x.dtype)
    return _make(out, [(x, lambda g: g * mask)], "clamp_min")


def tanh(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, [(x, lambda g: g * (1.0 - out * out))], "tanh")


def gelu(x: ArrayLike) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    x = _as_tensor(x)
    xd = x.data
    t = np.tanh(_GELU_C * (xd + _GELU_A * xd ** 3))
    out = 0.5 * xd * (1.0 + t)

    def vjp(g):
        sech2 = 1.0 - t * t
        return g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd))

    return _make(out, [(x, vjp)], "gelu")


def sum_(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).astype(x.dtype, copy=True)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).astype(x.dtype, copy=True)

    return _make(np.asarray(out), [(x, vjp)], "sum")


def mean(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    shape = x.shape
    n = x.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / n, shape).astype(x.dtype, copy=True)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / n, shape).astype(x.dtype, copy=True)

    return _make(np.asarray(out), [(x, vjp)], "mean")


def softmax(x: ArrayLike) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _make(out, [(x, vjp)], "softmax")


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Layer normalization over the last axis: gain * (x - mu)/sigma + bias."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gain.data + bias.data
    gd = gain.data

    def vjp_x(g):
        gy = g * gd
        return inv * (gy - gy.mean(axis=-1, keepdims=True)
                      - y * (gy * y).mean(axis=-1, keepdims=True))

    def vjp_gain(g):
        return (g * y).reshape(-1, d).sum(axis=0)

    def vjp_bias(g):
        return g.reshape(-1, d).sum(axis=0)

    return _make(out, [(x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)], "layer_norm")


def l2_normalize(x: ArrayLike, eps: float = _L2_EPS) -> Tensor:
    """Scale vectors along the last axis to unit L2 norm."""
    x = _as_tensor(x)
    s = (x.data * x.data).sum(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(s + eps)
    out = x.data * r
    xd = x.data

    def vjp(g):
        return r * g - (r ** 3) * xd * (g * xd).sum(axis=-1, keepdims=True)

    return _make(out, [(x, vjp)], "l2_normalize")


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Cosine similarity of two equal-shape vectors, returned as a scalar."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.shape != b.shape:
        raise ShapeError("cosine_similarity", a.shape, b.shape)
    na = float(np.sqrt((a.data ** 2).sum()))
    nb = float(np.sqrt((b.data ** 2).sum()))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine_similarity is undefined for zero vectors")
    num = sum_(mul(a, b))
    den = mul(power(sum_(mul(a, a)), 0.5), power(sum_(mul(b, b)), 0.5))
    return div(num, den)


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    if lead_a != lead_b and lead_a != () and lead_b != ():
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp_a(g):
        return _reduce_to(g @ np.swapaxes(bd, -1, -2), a.shape)

    def vjp_b(g):
        return _reduce_to(np.swapaxes(ad, -1, -2) @ g, b.shape)

    return _make(out, [(a, vjp_a), (b, vjp_b)], "matmul")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError("concat", ts[0].shape, t.shape)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        return vjp

    return _make(out, [(t, make_vjp(i)) for i, t in enumerate(ts)], "concat")


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)
    old = x.shape
    return _make(out, [(x, lambda g: g.reshape(old))], "reshape")


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = np.argsort(axes)
    return _make(out, [(x, lambda g: np.transpose(g, inv))], "transpose")


def narrow(x: ArrayLike, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    x = _as_tensor(x)
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError("narrow", x.shape, (axis, start, length))
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    out = x.data[tuple(idx)]
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[tuple(idx)] = g
        return full

    return _make(out, [(x, vjp)], "narrow")


def index_select(x: ArrayLike, axis: int, indices: Iterable[int]) -> Tensor:
    """Rows/slices at the given indices along ``axis`` (duplicates allowed)."""
    x = _as_tensor(x)
    idx = np.asarray(list(indices), dtype=np.int64)
    out = np.take(x.data, idx, axis=axis)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, (slice(None),) * axis + (idx,), g)
        return full

    return _make(out, [(x, vjp)], "index_select")


def gather_rows(x: ArrayLike, row_indices: Iterable[int]) -> Tensor:
    """Per-batch row selection: out[b] = x[b, row_indices[b]]."""
    x = _as_tensor(x)
    idx = np.asarray(list(row_indices), dtype=np.int64)
    if x.ndim < 2 or idx.shape != (x.shape[0],):
        raise ShapeError("gather_rows", x.shape, (len(idx),))
    b = np.arange(x.shape[0])
    out = x.data[b, idx]
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, (b, idx), g)
        return full

    return _make(out, [(x, vjp)], "gather_rows")


def embedding(table: ArrayLike, ids: Sequence[int]) -> Tensor:
    """Look up rows of an embedding table by integer id."""
    return index_select(table, 0, ids)


def scaled_dot_product_attention(q: ArrayLike, k: ArrayLike, v: ArrayLike,
                                 mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(q k^T / sqrt(d_head) + mask) v over the last two axes.

    ``mask`` is an additive constant (0 for visible, large negative for
    blocked positions), broadcastable against the score shape.
    """
    q = _as_tensor(q)
    k = _as_tensor(k, like=q)
    v = _as_tensor(v, like=q)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention", q.shape, k.shape, v.shape)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = mul(matmul(q, transpose(k, _swap_axes(k.ndim))), scale)
    if mask is not None:
        scores = _offset_by_constant(scores, np.asarray(mask, dtype=scores.dtype))
    return matmul(softmax(scores), v)


def _offset_by_constant(x: Tensor, const: np.ndarray) -> Tensor:
    """x + gradient-free constant; numpy broadcasting allowed (masks)."""
    out = x.data + const
    if out.shape != x.shape:
        raise ShapeError("offset_by_constant", x.shape, const.shape)
    return _make(out, [(x, lambda g: g)], "offset_by_constant")


def _swap_axes(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def stack_tensors(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shape tensors along a fresh axis (concat of reshapes)."""
    expanded = [reshape(t, list(t.shape[:axis]) + [1] + list(t.shape[axis:]))
                for t in tensors]
    return concat(expanded, axis=axis)
