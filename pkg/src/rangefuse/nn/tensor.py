"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every operation either records a backward closure (when gradients are
enabled and an input requires them) or degrades to plain numpy. Summation
order inside every primitive is fixed, so forward and backward passes are
bit-reproducible for identical inputs. The op set is deliberately small:
exactly what dense MLPs, a 1-D conv, a GRU, graph attention with
segment-wise softmax, and Euler-angle arithmetic need.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True
_TWO_PI = 2.0 * np.pi


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array with an optional gradient slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor(self.data.copy())
        return out

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad slot."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Operator sugar; every path funnels through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], tuple) else shape[0])

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._backward_fn is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D/2-D operands, got {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 2:
            _accumulate(a, g @ bd.T)
            _accumulate(b, np.outer(ad, g))
        elif ad.ndim == 2 and bd.ndim == 1:
            _accumulate(a, np.outer(g, bd))
            _accumulate(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 1:
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)
        else:
            _accumulate(a, g @ bd.T)
            _accumulate(b, ad.T @ g)

    return _make(data, (a, b), backward)


def reshape(t: Tensor, shape) -> Tensor:
    t = _as_tensor(t)
    data = t.data.reshape(shape)

    def backward(g):
        _accumulate(t, g.reshape(t.data.shape))

    return _make(data, (t,), backward)


def transpose(t: Tensor, axes=None) -> Tensor:
    t = _as_tensor(t)
    data = np.transpose(t.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        _accumulate(t, np.transpose(g, inv))

    return _make(data, (t,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def backward(g):
        offset = 0
        for t, size in zip(ts, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(index)])
            offset += size

    return _make(data, tuple(ts), backward)


def narrow(t: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing; use gather for integer-array indexing."""
    t = _as_tensor(t)
    data = t.data[key]

    def backward(g):
        full = np.zeros_like(t.data)
        full[key] += g
        _accumulate(t, full)

    return _make(data, (t,), backward)


def gather(t: Tensor, idx, axis: int = 0) -> Tensor:
    t = _as_tensor(t)
    idx = np.asarray(idx, dtype=np.int64)
    if axis != 0:
        raise ValueError("gather supports axis 0 only")
    data = t.data[idx]

    def backward(g):
        full = np.zeros_like(t.data)
        np.add.at(full, idx, g)
        _accumulate(t, full)

    return _make(data, (t,), backward)


def tensor_sum(t: Tensor, axis=None) -> Tensor:
    t = _as_tensor(t)
    data = t.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(t, np.broadcast_to(g, t.data.shape).copy())
        else:
            _accumulate(t, np.broadcast_to(np.expand_dims(g, axis), t.data.shape).copy())

    return _make(np.asarray(data), (t,), backward)


def tensor_mean(t: Tensor, axis=None) -> Tensor:
    t = _as_tensor(t)
    count = t.data.size if axis is None else t.data.shape[axis]
    return mul(tensor_sum(t, axis), 1.0 / count)


def leaky_relu(t: Tensor, alpha: float = 0.2) -> Tensor:
    t = _as_tensor(t)
    mask = t.data > 0.0
    data = np.where(mask, t.data, alpha * t.data)

    def backward(g):
        _accumulate(t, np.where(mask, g, alpha * g))

    return _make(data, (t,), backward)


def tanh(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = np.tanh(t.data)

    def backward(g):
        _accumulate(t, g * (1.0 - data * data))

    return _make(data, (t,), backward)


def sigmoid(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = 1.0 / (1.0 + np.exp(-t.data))

    def backward(g):
        _accumulate(t, g * data * (1.0 - data))

    return _make(data, (t,), backward)


def sin(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = np.sin(t.data)

    def backward(g):
        _accumulate(t, g * np.cos(t.data))

    return _make(data, (t,), backward)


def cos(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = np.cos(t.data)

    def backward(g):
        _accumulate(t, -g * np.sin(t.data))

    return _make(data, (t,), backward)


def asin(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = np.arcsin(np.clip(t.data, -1.0, 1.0))

    def backward(g):
        denom = np.sqrt(np.maximum(1.0 - t.data * t.data, 1e-12))
        _accumulate(t, g / denom)

    return _make(data, (t,), backward)


def atan2(y: Tensor, x: Tensor) -> Tensor:
    y, x = _as_tensor(y), _as_tensor(x)
    data = np.arctan2(y.data, x.data)

    def backward(g):
        denom = x.data * x.data + y.data * y.data
        _accumulate(y, _unbroadcast(g * x.data / denom, y.data.shape))
        _accumulate(x, _unbroadcast(-g * y.data / denom, x.data.shape))

    return _make(data, (y, x), backward)


def wrap_angle_t(t: Tensor) -> Tensor:
    """Wrap to (-pi, pi]. The map is a shift by multiples of 2*pi, so the
    gradient passes through unchanged (undefined only on a measure-zero set)."""
    t = _as_tensor(t)
    data = t.data - _TWO_PI * np.floor((t.data + np.pi) / _TWO_PI)
    data = np.where(data <= -np.pi, data + _TWO_PI, data)

    def backward(g):
        _accumulate(t, g)

    return _make(data, (t,), backward)


def _segment_starts(segment_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start offsets and lengths of each run in a sorted id vector."""
    if len(segment_ids) == 0:
        raise ValueError("segment ops need at least one element")
    if np.any(np.diff(segment_ids) < 0):
        raise ValueError("segment_ids must be sorted ascending")
    starts = np.flatnonzero(np.r_[True, np.diff(segment_ids) > 0])
    lengths = np.diff(np.r_[starts, len(segment_ids)])
    return starts, lengths


def segment_softmax(t: Tensor, segment_ids) -> Tensor:
    """Softmax over contiguous runs of equal segment id, along axis 0.

    `t` is (E,) or (E, H); each destination's scores normalize to 1 within
    its run independently per trailing column.
    """
    t = _as_tensor(t)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if t.data.shape[0] != len(ids):
        raise ValueError(f"segment_ids length {len(ids)} != leading dim {t.data.shape[0]}")
    starts, lengths = _segment_starts(ids)
    peak = np.repeat(np.maximum.reduceat(t.data, starts, axis=0), lengths, axis=0)
    expd = np.exp(t.data - peak)
    total = np.repeat(np.add.reduceat(expd, starts, axis=0), lengths, axis=0)
    data = expd / total

    def backward(g):
        weighted = np.add.reduceat(data * g, starts, axis=0)
        _accumulate(t, data * (g - np.repeat(weighted, lengths, axis=0)))

    return _make(data, (t,), backward)


def segment_sum(t: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id into a (num_segments, ...) tensor."""
    t = _as_tensor(t)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if t.data.shape[0] != len(ids):
        raise ValueError(f"segment_ids length {len(ids)} != leading dim {t.data.shape[0]}")
    if len(ids) and (ids.min() < 0 or ids.max() >= num_segments):
        raise ValueError("segment id out of range")
    data = np.zeros((num_segments,) + t.data.shape[1:], dtype=np.float64)
    np.add.at(data, ids, t.data)

    def backward(g):
        _accumulate(t, g[ids])

    return _make(data, (t,), backward)


def grad_check(fn, params: dict[str, Tensor], h: float = 1e-6,
               max_elems_per_param: int | None = None, sample_seed: int = 0) -> tuple[float, str]:
    """Compare analytic gradients of a scalar function against central differences.

    `fn` is re-evaluated per perturbation and must be deterministic. Returns
    the worst relative error and the parameter element it occurred at.
    Relative error uses max(|fd|, |analytic|, 1e-3) as denominator so
    near-zero gradients compare absolutely. Large parameters can be spot
    checked by capping perturbed elements per parameter ("max_elems_per_param",
    sampled without replacement from "sample_seed").
    """
    for p in params.values():
        p.grad = None
    out = fn()
    out.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
    rng = np.random.default_rng(sample_seed)
    worst, worst_at = 0.0, "<none>"
    for name in sorted(params):
        p = params[name]
        flat = p.data.reshape(-1)
        if max_elems_per_param is not None and flat.size > max_elems_per_param:
            indices = rng.choice(flat.size, size=max_elems_per_param, replace=False)
        else:
            indices = range(flat.size)
        for i in indices:
            keep = flat[i]
            flat[i] = keep + h
            hi = float(fn().data)
            flat[i] = keep - h
            lo = float(fn().data)
            flat[i] = keep
            fd = (hi - lo) / (2.0 * h)
            an = float(analytic[name].reshape(-1)[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
            if rel > worst:
                worst, worst_at = rel, f"{name}[{i}]"
    return worst, worst_at
