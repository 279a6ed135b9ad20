"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every op records a closure that maps the output gradient to the input
gradients.  ``Tensor.backward`` walks the graph in reverse topological order
and accumulates into the ``grad`` of leaf tensors that require gradients.

Values keep the dtype of their inputs: parameters are float32, while tests
cast them to float64 to run a shadow evaluation against finite differences.
"""
from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NonFiniteError(FloatingPointError):
    """Raised when NaN or inf would enter an optimizer update."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (rollouts, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _as_array(x, dtype=None) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.dtype.kind == "f":
        return x if dtype is None else x.astype(dtype, copy=False)
    return np.asarray(x, dtype=dtype or np.float32)


class Tensor:
    """A graph node: a value, its gradient and how to push gradients back."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- backward ----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires gradients."""
        if self.data.size != 1:
            raise ShapeError("backward (output must be scalar)", self.shape)
        if not self.requires_grad:
            return
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ----------------------------------------------------
    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

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

    @property
    def T(self):
        return transpose(self, None)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative post-order; graphs from long recurrences are too deep to recurse
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return _make(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("minimum", a, b)
    pick_a = a.data <= b.data

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                _unbroadcast(np.where(pick_a, 0, g), b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), backward, "minimum")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("maximum", a, b)
    pick_a = a.data >= b.data

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                _unbroadcast(np.where(pick_a, 0, g), b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# -- nonlinearities ---------------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _make(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g / (2 * y),), "sqrt")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), backward, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log of softmax over the last axis."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make(y, (a,), backward, "log_softmax")


# -- fused primitives (fewer graph nodes on the hot recurrent paths) ------------

def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)


def gru_gates(xp: Tensor, hp: Tensor, h: Tensor) -> Tensor:
    """GRU update from projected input ``xp`` and projected hidden ``hp`` (both (..., 3H)).

    r = sigmoid(x_r + h_r), z = sigmoid(x_z + h_z), n = tanh(x_n + r * h_n),
    h' = n + z * (h - n).
    """
    H = h.shape[-1]
    if xp.shape[-1] != 3 * H or hp.shape[-1] != 3 * H:
        raise ShapeError("gru_gates", xp.shape, hp.shape, h.shape)
    xd, hd = xp.data, hp.data
    r = _sigmoid_array(xd[..., :H] + hd[..., :H])
    z = _sigmoid_array(xd[..., H:2 * H] + hd[..., H:2 * H])
    hn = hd[..., 2 * H:]
    n = np.tanh(xd[..., 2 * H:] + r * hn)
    out = n + z * (h.data - n)
    h_prev = h.data

    def backward(g):
        dz = g * (h_prev - n) * z * (1 - z)
        da = g * (1 - z) * (1 - n * n)
        dr = da * hn * r * (1 - r)
        gx = np.concatenate([dr, dz, da], axis=-1)
        gh = np.concatenate([dr, dz, da * r], axis=-1)
        return _unbroadcast(gx, xp.shape), _unbroadcast(gh, hp.shape), _unbroadcast(g * z, h.shape)

    return _make(out, (xp, hp, h), backward, "gru_gates")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    xd = x.data
    xc = xd - xd.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), backward, "layer_norm")


# -- linear algebra -----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for (..., n, k) @ (k, m) or equal-batch (B, n, k) @ (B, k, m)."""
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if bd.ndim > 2 and (ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2]):
        raise ShapeError("matmul", a.shape, b.shape)
    out = ad @ bd

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# -- reductions and reshaping ---------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    s = sum_(a, axis, keepdims)
    return mul(s, Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, tuple(axes))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    try:
        out = a.data[idx]
    except IndexError:
        raise ShapeError(f"slice {idx!r}", shape) from None

    fancy = _is_fancy(idx)

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward, "slice")


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [arr.shape[axis] for arr in arrays]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in tensors]) from None
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _make(out, tuple(tensors), backward, "stack")


def take_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select ``a[..., idx]`` elementwise: ``idx`` has the shape of ``a[..., 0]``."""
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise ShapeError("take_last", a.shape, idx.shape)
    idx_e = idx[..., None]
    out = np.take_along_axis(a.data, idx_e, axis=-1)[..., 0]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, idx_e, g[..., None], axis=-1)
        return (full,)

    return _make(out, (a,), backward, "take_last")


def gather_rows(bank: Tensor, idx: np.ndarray) -> Tensor:
    """Row ``idx[b]`` of ``bank[b]`` for a (B, N, H) bank; returns (B, H)."""
    idx = np.asarray(idx)
    if bank.ndim != 3 or idx.shape != bank.shape[:1]:
        raise ShapeError("gather_rows", bank.shape, idx.shape)
    ar = np.arange(bank.shape[0])
    shape = bank.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[ar, idx] = g
        return (full,)

    return _make(bank.data[ar, idx], (bank,), backward, "gather_rows")


def scatter_rows(bank: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of ``bank`` with ``bank[b, idx[b]] = rows[b]``."""
    idx = np.asarray(idx)
    if bank.ndim != 3 or idx.shape != bank.shape[:1] or rows.shape != (bank.shape[0], bank.shape[2]):
        raise ShapeError("scatter_rows", bank.shape, idx.shape, rows.shape)
    ar = np.arange(bank.shape[0])
    out = bank.data.copy()
    out[ar, idx] = rows.data

    def backward(g):
        gb = g.copy()
        gb[ar, idx] = 0
        return gb, g[ar, idx]

    return _make(out, (bank, rows), backward, "scatter_rows")


def parameters_finite(arrays: Iterable[np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


class Adam:
    """Adam with bias correction.

    ``lr`` may be changed between steps (the trainer drives a linear decay).
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: Adam) -> None:
    """One in-place Adam update of ``params`` using ``state``'s moments."""
    if len(grads) != len(state.m):
        raise ShapeError("adam_step", (len(grads),), (len(state.m),))
    if state.lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {state.lr}")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ShapeError("adam_step", p.data.shape, g.shape)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {p.name or '?'}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype, copy=False)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``.

    Returns the (possibly) scaled gradients and the norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads), norm
    scale = max_norm / norm
    return [(g * scale).astype(g.dtype, copy=False) for g in grads], norm
