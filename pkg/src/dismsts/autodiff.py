"""A small reverse-mode automatic differentiation engine over float64 numpy arrays.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the upstream gradient to one gradient per parent.
Node ids grow monotonically with creation, so sorting the ancestors of a loss by
id yields a valid topological order (the tape).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyOutputError,
    KernelTooLargeError,
    LabelError,
    RankError,
    StateError,
)

_node_ids = itertools.count()
_grad_enabled = True

COSINE_EPS = 1e-8


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "_consumed")

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.node_id = next(_node_ids) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise RankError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operator sugar ---------------------------------------------------
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

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

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out._consumed = False
    if any(p._consumed for p in parents):
        raise StateError("input belongs to a graph that backward already consumed")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None
        out.node_id = next(_node_ids)
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out.grad = None
        out.node_id = None
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- tape and backward ----------------------------------------------------


class Tape:
    """Ordered record of the operations that produced ``output``.

    ``nodes`` lists every tracked ancestor (leaves included) in creation order,
    which is topological because a node is always created after its inputs.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            node = stack.pop()
            if node.node_id in seen:
                continue
            seen[node.node_id] = node
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append(p)
        return cls([seen[k] for k in sorted(seen)])

    @property
    def operations(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.is_leaf]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(node) into ``.grad`` of every tracked ancestor.

    The graph is released afterwards; calling backward twice on the same loss
    raises :class:`StateError`.
    """
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise StateError("loss is not attached to a tape (no tracked inputs or built under no_grad)")
    if loss.data.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise StateError("backward already ran through this graph; rebuild the forward pass")
    tape = Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(node.node_id, None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        grads = node._backward(g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            key = parent.node_id
            pending[key] = pg if key not in pending else pending[key] + pg
    for node in tape.nodes:
        if node._backward is not None:
            node._consumed = True
            node._parents = ()
            node._backward = None
    # keep the loss itself flagged as a non-leaf that has been consumed
    loss._consumed = True
    return tape


# -- elementwise arithmetic -----------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- reductions and shape ---------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes {tensors[0].shape} and {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tensors, bw)


# -- linear algebra and signal ops -----------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; leading (batch) dimensions broadcast as in ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(out, (a, b), bw)


def conv1d(x, kernels, bias, stride: int = 1) -> Tensor:
    """Valid (unpadded) cross-correlation.

    x: (..., T); kernels: (..., C, k); bias: (..., C) -> (..., C, L) with
    L = (T - k) // stride + 1. Leading dimensions broadcast, which lets one
    call apply a different kernel bank to each variable.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    T = x.shape[-1]
    C, k = kernels.shape[-2:]
    if k > T:
        raise KernelTooLargeError(f"kernel size {k} exceeds series length {T}")
    if bias.shape[-1] != C:
        raise DimensionError(f"bias shape {bias.shape} does not match {C} kernels")
    L = (T - k) // stride + 1
    idx = stride * np.arange(L)[:, None] + np.arange(k)[None, :]
    win = x.data[..., idx]                                   # (..., L, k)
    kt = np.swapaxes(kernels.data, -1, -2)                   # (..., k, C)
    out = np.swapaxes(np.matmul(win, kt), -1, -2) + bias.data[..., None]

    def bw(g):
        gt = np.swapaxes(g, -1, -2)                          # (..., L, C)
        gx = gk = gb = None
        if x.requires_grad:
            dwin = np.matmul(gt, kernels.data)               # (..., L, k)
            full = np.zeros(dwin.shape[:-2] + (T,))
            for j in range(k):
                full[..., idx[:, j]] += dwin[..., j]
            gx = _unbroadcast(full, x.shape)
        if kernels.requires_grad:
            dk = np.matmul(np.swapaxes(win, -1, -2), gt)     # (..., k, C)
            gk = _unbroadcast(np.swapaxes(dk, -1, -2), kernels.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g.sum(axis=-1), bias.shape)
        return gx, gk, gb

    return _make(out, (x, kernels, bias), bw)


def avg_pool1d(x, window: int) -> Tensor:
    """Non-overlapping means over the last axis; a trailing remainder is dropped."""
    x = as_tensor(x)
    if window < 1:
        raise DimensionError(f"window must be >= 1, got {window}")
    T = x.shape[-1]
    L = T // window
    if L == 0:
        raise EmptyOutputError(f"series of length {T} is shorter than pooling window {window}")
    used = L * window
    out = x.data[..., :used].reshape(x.shape[:-1] + (L, window)).mean(axis=-1)

    def bw(g):
        full = np.zeros_like(x.data)
        full[..., :used] = np.repeat(g / window, window, axis=-1)
        return (full,)

    return _make(out, (x,), bw)


# -- losses and similarities ----------------------------------------------


def cosine_similarity(a, b, eps: float = COSINE_EPS) -> Tensor:
    """Cosine similarity along the last axis: <a,b> / (max(|a|,eps) * max(|b|,eps))."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError("cosine_similarity needs vectors of length >= 1")
    dot = np.sum(a.data * b.data, axis=-1)
    ra = np.sqrt(np.sum(a.data * a.data, axis=-1))
    rb = np.sqrt(np.sum(b.data * b.data, axis=-1))
    na = np.maximum(ra, eps)
    nb = np.maximum(rb, eps)
    cos = dot / (na * nb)

    def bw(g):
        g = g[..., None]
        c = cos[..., None]
        ga = gb = None
        if a.requires_grad:
            ga = b.data / (na * nb)[..., None] - (ra > eps)[..., None] * c * a.data / (na * na)[..., None]
            ga = g * ga
        if b.requires_grad:
            gb = a.data / (na * nb)[..., None] - (rb > eps)[..., None] * c * b.data / (nb * nb)[..., None]
            gb = g * gb
        return ga, gb

    return _make(cos, (a, b), bw)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise RankError(f"logits must be (batch, classes), got {logits.shape}")
    B, K = logits.shape
    if labels.shape != (B,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch of {B}")
    bad = np.flatnonzero((labels < 0) | (labels >= K) | (labels != np.floor(labels)))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {labels[i]} at index {i} is outside [0, {K})")
    labels = labels.astype(np.intp)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = np.mean(lse - z[np.arange(B), labels])

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(B), labels] -= 1.0
        return (g * p / B,)

    return _make(np.asarray(loss), (logits,), bw)


def mse(a, target) -> Tensor:
    """Mean squared error between a tensor and a target (tensor or scalar)."""
    d = sub(a, target)
    return mean(mul(d, d))


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
