"""Dense tensors with define-by-run reverse-mode autodiff.

Data lives in numpy buffers (f32 for training, f64 for gradient checks).
Each primitive records a backward closure; `backward(loss)` walks the tape
in reverse topological order and accumulates gradients additively into every
reachable tensor with `requires_grad`.  The graph is rebuilt on every
forward pass; nothing is retained across steps.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import GradientError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True
_nan_checks = False


def set_nan_checks(enabled: bool) -> None:
    """When on, every op forward and every backward grad is checked for NaN/inf."""
    global _nan_checks
    _nan_checks = bool(enabled)


@contextmanager
def no_grad():
    """Disable tape construction inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data).astype(np.dtype(dtype), copy=False)
    if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
        return data
    # f32 is the training default; f64 only when handed in explicitly
    return np.asarray(data, dtype=np.float32)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._bwd = None
        self.op = "leaf"

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_const_like(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _node(data: np.ndarray, parents: tuple, op: str, make_bwd) -> Tensor:
    """Create a graph node; collapses to a constant when no parent needs grad."""
    if _nan_checks and not np.all(np.isfinite(data)):
        raise GradientError(f"non-finite values produced by op '{op}'")
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._bwd = make_bwd()
        t.op = op
    else:
        t.requires_grad = False
        t._parents = ()
        t._bwd = None
        t.op = op
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _coerce_pair(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a  # Tensor first; only reached from reflected operators
    if not isinstance(b, Tensor):
        b = _const_like(b, a)
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    return a, b


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"op '{op}': cannot broadcast shapes {a.shape} and {b.shape}") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "add")
    data = a.data + b.data

    def make():
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.data.shape))
        return bwd

    return _node(data, (a, b), "add", make)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "sub")
    data = a.data - b.data

    def make():
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.data.shape))
        return bwd

    return _node(data, (a, b), "sub", make)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "mul")
    data = a.data * b.data

    def make():
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.data.shape))
        return bwd

    return _node(data, (a, b), "mul", make)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "div")
    data = a.data / b.data

    def make():
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        return bwd

    return _node(data, (a, b), "div", make)


def neg(a: Tensor) -> Tensor:
    def make():
        def bwd(g):
            _accum(a, -g)
        return bwd

    return _node(-a.data, (a,), "neg", make)


def pow_const(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def make():
        def bwd(g):
            _accum(a, g * p * a.data ** (p - 1.0))
        return bwd

    return _node(data, (a,), "pow", make)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def make():
        def bwd(g):
            _accum(a, g * data)
        return bwd

    return _node(data, (a,), "exp", make)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def make():
        def bwd(g):
            _accum(a, g / a.data)
        return bwd

    return _node(data, (a,), "log", make)


def sigmoid(a: Tensor) -> Tensor:
    # exp formulated per sign branch to stay finite over the full float range
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype, copy=False)

    def make():
        def bwd(g):
            _accum(a, g * data * (1.0 - data))
        return bwd

    return _node(data, (a,), "sigmoid", make)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def make():
        def bwd(g):
            _accum(a, g * (1.0 - data * data))
        return bwd

    return _node(data, (a,), "tanh", make)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def make():
        def bwd(g):
            _accum(a, g * (a.data > 0))
        return bwd

    return _node(data, (a,), "relu", make)


# -- reductions --------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def make():
        def bwd(g):
            if axis is None:
                ga = np.broadcast_to(g, a.data.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                ga = np.broadcast_to(gg, a.data.shape)
            _accum(a, ga)
        return bwd

    return _node(data, (a,), "sum", make)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size // data.size

    def make():
        def bwd(g):
            if axis is None:
                ga = np.broadcast_to(g, a.data.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                ga = np.broadcast_to(gg, a.data.shape)
            _accum(a, ga / count)
        return bwd

    return _node(data, (a,), "mean", make)


def squared_l2(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return tsum(mul(a, a), axis=axis, keepdims=keepdims)


# -- softmax family ----------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def make():
        def bwd(g):
            dot = (g * data).sum(axis=axis, keepdims=True)
            _accum(a, data * (g - dot))
        return bwd

    return _node(data, (a,), "softmax", make)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def make():
        def bwd(g):
            _accum(a, g - probs * g.sum(axis=axis, keepdims=True))
        return bwd

    return _node(data, (a,), "log_softmax", make)


# -- shape & indexing --------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def make():
        def bwd(g):
            _accum(a, g.reshape(a.data.shape))
        return bwd

    return _node(data, (a,), "reshape", make)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    data = a.data.swapaxes(ax1, ax2)

    def make():
        def bwd(g):
            _accum(a, g.swapaxes(ax1, ax2))
        return bwd

    return _node(data, (a,), "swapaxes", make)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def make():
        def bwd(g):
            offset = 0
            for t, s in zip(tensors, sizes):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(offset, offset + s)
                    _accum(t, g[tuple(idx)])
                offset += s
        return bwd

    return _node(data, tensors, "concat", make)


def getitem(a: Tensor, key) -> Tensor:
    """Basic indexing (ints, slices, None); gradient scatters into the source."""
    data = a.data[key]

    def make():
        def bwd(g):
            full = np.zeros_like(a.data)
            full[key] = g
            _accum(a, full)
        return bwd

    return _node(data, (a,), "getitem", make)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Row lookup table[idx] for an integer index array; duplicates accumulate."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"gather_rows needs integer indices, got {idx.dtype}")
    data = table.data[idx]

    def make():
        def bwd(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _accum(table, full)
        return bwd

    return _node(data, (table,), "gather_rows", make)


def take_along_last(a: Tensor, idx) -> Tensor:
    """Pick one entry along the last axis per leading position: out[...] = a[..., idx[...]]."""
    idx = np.asarray(idx)
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def make():
        def bwd(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
            _accum(a, full)
        return bwd

    return _node(data, (a,), "take_along_last", make)


# -- matmul -------------------------------------------------------------------


def matmul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = _const_like(b, a)
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def make():
        def bwd(g):
            if a.requires_grad:
                ga = g @ b.data.swapaxes(-1, -2)
                _accum(a, _unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = a.data.swapaxes(-1, -2) @ g
                _accum(b, _unbroadcast(gb, b.data.shape))
        return bwd

    return _node(data, (a, b), "matmul", make)


# -- backward -----------------------------------------------------------------


def _toposort(root: Tensor) -> list:
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return topo


def backward(loss: Tensor) -> None:
    """Populate `.grad` of every reachable requires_grad tensor with d(loss)/d(tensor)."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not require grad; nothing to differentiate")
    if not np.all(np.isfinite(loss.data)):
        raise GradientError(f"non-finite loss from op '{loss.op}'")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bwd is None or node.grad is None:
            continue
        if _nan_checks and not np.all(np.isfinite(node.grad)):
            raise GradientError(f"non-finite gradient flowing into op '{node.op}'")
        node._bwd(node.grad)
