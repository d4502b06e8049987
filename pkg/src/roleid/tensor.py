"""Dense-tensor numeric core with reverse-mode differentiation.

Covers exactly the operation set the role classifier needs: (batched)
matrix multiply, elementwise arithmetic and activations, concatenation,
stacking, slicing, masked softmax, axis reductions, embedding gather and
dropout. Values are numpy arrays; every op that participates in a loss
records a backward closure, and ``backward`` replays them in reverse
topological order.

Two precision modes exist: float32 (training default) and float64 (used
by the finite-difference gradient checker). The mode is a process-wide
switch, see ``set_precision`` / ``precision``.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}
_active_dtype = np.float32
_grad_enabled = True


def set_precision(mode: str) -> None:
    """Select the process-wide float mode, 'f32' or 'f64'."""
    global _active_dtype
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision mode {mode!r}; expected one of {sorted(_DTYPES)}")
    _active_dtype = _DTYPES[mode]


def default_dtype():
    return _active_dtype


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch precision mode (used by tests and gradcheck)."""
    global _active_dtype
    previous = _active_dtype
    set_precision(mode)
    try:
        yield
    finally:
        _active_dtype = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward values only."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_active_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_active_dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, recording the closure only when it can matter."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad += g


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss into every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _sum_to_shape(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _sum_to_shape(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _sum_to_shape(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _sum_to_shape(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _sum_to_shape(gb, b.data.shape))

    return _make(out_data, (a, b), bwd)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * (1.0 - y * y))

    return _make(y, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # tanh form is overflow-safe and needs one transcendental.
    y = 0.5 * np.tanh(0.5 * x.data) + 0.5

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * y * (1.0 - y))

    return _make(y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0))

    return _make(y, (x,), bwd)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g / x.data)

    return _make(y, (x,), bwd)


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x exceeds the floor."""
    x = _as_tensor(x)
    y = np.maximum(x.data, floor)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > floor))

    return _make(y, (x,), bwd)


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for piece, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if piece.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(piece, g[tuple(idx)])

    return _make(out_data, tuple(parts), bwd)


def stack(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out_data = np.stack([p.data for p in parts], axis=axis)

    def bwd(g):
        for i, piece in enumerate(parts):
            if piece.requires_grad:
                _accumulate(piece, np.take(g, i, axis=axis))

    return _make(out_data, tuple(parts), bwd)


def index_axis(x: Tensor, axis: int, index: int) -> Tensor:
    """Select one slice along an axis, dropping it (x[..., index, ...])."""
    x = _as_tensor(x)
    sel = [slice(None)] * x.data.ndim
    sel[axis] = index
    out_data = x.data[tuple(sel)]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            idx = [slice(None)] * x.data.ndim
            idx[axis] = index
            gx[tuple(idx)] = g
            _accumulate(x, gx)

    return _make(out_data, (x,), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous range slice along one axis, keeping the axis."""
    x = _as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out_data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[idx] = g
            _accumulate(x, gx)

    return _make(out_data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(x.data.shape))

    return _make(out_data, (x,), bwd)


def transpose_last(x: Tensor) -> Tensor:
    """Swap the trailing two axes (attention key transpose)."""
    x = _as_tensor(x)
    out_data = np.swapaxes(x.data, -1, -2)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, np.swapaxes(g, -1, -2))

    return _make(out_data, (x,), bwd)


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if x.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False))

    return _make(out_data, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum())

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False))

    return _make(out_data, (x,), bwd)


def max_axis(x: Tensor, axis: int) -> Tensor:
    """Max over an axis; gradient routes to the first argmax (deterministic)."""
    x = _as_tensor(x)
    out_data = x.data.max(axis=axis)
    argmax = np.argmax(x.data, axis=axis)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.expand_dims(argmax, axis), np.expand_dims(g, axis), axis)
            _accumulate(x, gx)

    return _make(out_data, (x,), bwd)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a (rows, width) table; output shape ids.shape + (width,)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.data.shape[0]):
        raise IndexError(
            f"embedding ids out of range [0, {weight.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out_data = weight.data[ids]

    def bwd(g):
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[1]))
            _accumulate(weight, gw)

    return _make(out_data, (weight,), bwd)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: kept units scaled by 1/(1-rate); identity in eval."""
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("training-mode dropout requires an explicit rng")
    x = _as_tensor(x)
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.data.dtype)
    out_data = x.data * keep * scale

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * keep * scale)

    return _make(out_data, (x,), bwd)


def masked_softmax(logits: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along `axis`; positions where mask is False get exactly 0.

    Masking adds -1e9 to excluded logits before the exp (avoiding NaN from a
    true -inf) and then zeroes them outright, so each group is a distribution
    over its unmasked members. A group with no unmasked member is a domain
    error naming the offending group index.
    """
    logits = _as_tensor(logits)
    nd = logits.data.ndim
    ax = axis % nd
    if mask is not None:
        mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), logits.data.shape)
        dead = ~mask_b.any(axis=ax)
        if dead.any():
            where = tuple(int(i) for i in np.argwhere(np.atleast_1d(dead))[0])
            raise ValueError(f"masked_softmax: group {where} along axis {axis} is fully masked")
        maskf = mask_b.astype(logits.data.dtype)
        shifted = logits.data + (maskf - 1.0) * 1e9
    else:
        maskf = None
        shifted = logits.data
    shifted = shifted - shifted.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    if maskf is not None:
        e = e * maskf
    y = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        if logits.requires_grad:
            inner = (g * y).sum(axis=ax, keepdims=True)
            _accumulate(logits, y * (g - inner))

    return _make(y, (logits,), bwd)


def masked_mean_rows(x: Tensor, mask: np.ndarray) -> Tensor:
    """Average the rows of x (axis -2) whose mask entry is True.

    x has shape (..., L, W) and mask (..., L); the result is (..., W).
    Groups with no unmasked row yield zeros (callers decide whether that
    warrants a warning or an error); the divisor is clamped to 1 so no NaN
    is produced.
    """
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.data.shape[:-1]:
        raise ValueError(f"mask shape {mask.shape} does not match rows of {x.data.shape}")
    if mask.all():
        inv = np.asarray(1.0 / mask.shape[-1], dtype=x.data.dtype)
        return mul(sum_axis(x, axis=-2), Tensor(inv))
    maskf = np.expand_dims(mask, -1).astype(x.data.dtype)
    counts = np.maximum(mask.sum(axis=-1), 1).astype(x.data.dtype)
    total = sum_axis(mul(x, Tensor(maskf)), axis=-2)
    inv = np.expand_dims(1.0 / counts, -1)
    return mul(total, Tensor(inv))
