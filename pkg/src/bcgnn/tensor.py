"""Minimal dense tensors with tape-based reverse-mode autodiff.

Every op records its parents and a closure that maps the output gradient to
parent gradients. ``backward`` walks the recorded graph in reverse
topological order. Gradients *accumulate* into ``Tensor.grad``: calling
``backward`` twice without ``zero_grad`` doubles them.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the dimension."""


class NumericError(FloatingPointError):
    """Raised when a computation produces non-finite values."""


def _as_array(data, dtype=None) -> np.ndarray:
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    # op outputs keep their computed dtype so double-precision checks stay double
    data = np.asarray(data)
    out = Tensor(data, dtype=data.dtype if data.dtype == np.float64 else np.float32)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient flows only where the input is inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


# ---------------------------------------------------------------- reductions / linear algebra


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _make(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul: scalar operands are not supported")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimension mismatch, left has {a.shape[-1]} columns, right has {b.shape[0]} rows"
        )

    def bw(g):
        if b.ndim == 1:
            ga = np.outer(g, b.data) if a.ndim == 2 else g * b.data
            gb = a.data.T @ g if a.ndim == 2 else a.data * g
        elif a.ndim == 1:
            ga = b.data @ g
            gb = np.outer(a.data, g)
        else:
            ga = g @ b.data.T
            gb = a.data.T @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    if out.size != x.data.size:
        raise ShapeError(f"reshape: {x.shape} -> {tuple(shape)} changes element count")
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref):
            raise ShapeError(f"concat: rank mismatch {x.shape} vs {xs[0].shape}")
        for d, (p, q) in enumerate(zip(ref, other)):
            if d != axis % len(ref) and p != q:
                raise ShapeError(f"concat: dimension {d} differs ({p} vs {q})")
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(
        np.concatenate([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing, e.g. ``slice_(x, (slice(None), 3))``."""

    def bw(g):
        full = np.zeros_like(x.data)
        full[index] += g
        return (full,)

    return _make(np.asarray(x.data[index]), (x,), bw)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise ShapeError(f"take: index out of range for dimension {axis} of size {x.shape[axis]}")

    def bw(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(np.take(x.data, idx, axis=axis), (x,), bw)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets (scatter-add along axis 0)."""
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum: {ids.shape[0] if ids.ndim else 0} ids for {x.shape[0]} rows")
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out, ids, x.data)
    return _make(out, (x,), lambda g: (g[ids],))


def interp_gather(x: Tensor, positions) -> Tensor:
    """Linear interpolation of the columns of a ``[C, L]`` tensor at float positions.

    Returns ``[C, len(positions)]``; positions must lie in ``[0, L-1]``.
    """
    if x.ndim != 2:
        raise ShapeError(f"interp_gather: expected a [C, L] tensor, got {x.shape}")
    pos = np.asarray(positions, dtype=np.float64)
    length = x.shape[1]
    if pos.size and (pos.min() < 0 or pos.max() > length - 1):
        raise ShapeError(f"interp_gather: positions outside [0, {length - 1}]")
    lo = np.clip(np.floor(pos).astype(np.intp), 0, max(length - 2, 0))
    hi = np.minimum(lo + 1, length - 1)
    w_hi = (pos - lo).astype(x.data.dtype)
    w_lo = (1.0 - (pos - lo)).astype(x.data.dtype)
    out = x.data[:, lo] * w_lo + x.data[:, hi] * w_hi

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full.T, lo, (g * w_lo).T)
        np.add.at(full.T, hi, (g * w_hi).T)
        return (full,)

    return _make(out, (x,), bw)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1D convolution (cross-correlation) of ``[D_in, L]`` input."""
    if x.ndim != 2:
        raise ShapeError(f"conv1d: input must be [D_in, L], got {x.shape}")
    if weight.ndim != 3:
        raise ShapeError(f"conv1d: weight must be [D_out, D_in, k], got {weight.shape}")
    d_out, d_in, k = weight.shape
    if x.shape[0] != d_in:
        raise ShapeError(f"conv1d: input channels (D_in) {x.shape[0]} != weight D_in {d_in}")
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel size k={k} must be odd")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"conv1d: bias length {bias.shape} != D_out {d_out}")
    length = x.shape[1]
    pad = (k - 1) // 2
    padded = np.pad(x.data, ((0, 0), (pad, pad)))
    # cols[c * k + t, l] = padded[c, l + t]
    cols = np.stack([padded[:, t : t + length] for t in range(k)], axis=1).reshape(d_in * k, length)
    w2 = weight.data.reshape(d_out, d_in * k)
    out = w2 @ cols
    if bias is not None:
        out = out + bias.data[:, None]

    def bw(g):
        gw = (g @ cols.T).reshape(weight.shape)
        gcols = (w2.T @ g).reshape(d_in, k, length)
        gpad = np.zeros_like(padded)
        for t in range(k):
            gpad[:, t : t + length] += gcols[:, t, :]
        gx = gpad[:, pad : pad + length]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=1))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable requires_grad tensor."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def init_uniform(self, name: str, shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=tuple(shape)).astype(np.float32))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_elements(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, v in state.items():
            t = self._params[k]
            if tuple(v.shape) != t.shape:
                raise ShapeError(f"parameter {k!r}: stored shape {tuple(v.shape)} != model shape {t.shape}")
            t.data = np.asarray(v, dtype=np.float32).copy()


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-4,
    dtype=np.float64,
) -> float:
    """Compare analytic gradients with central differences over every parameter entry.

    Returns ``max |analytic - numeric| / max(1, |numeric|)``. Parameters are cast to
    ``dtype`` for the duration of the check (double precision by default, so the
    comparison measures the gradient formulas rather than float32 roundoff) and
    restored afterwards. ``dtype=None`` checks at the stored precision.
    """
    if not 1e-5 <= eps <= 1e-2:
        raise ValueError(f"eps={eps} outside [1e-5, 1e-2]")
    saved = {k: (t.data, t.grad) for k, t in params.items()}
    try:
        if dtype is not None:
            for _, t in params.items():
                t.data = t.data.astype(dtype)
        params.zero_grad()
        loss = f(params)
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("grad_check: loss is not finite")
        backward(loss)
        worst = 0.0
        for name, t in params.items():
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                up = float(f(params).data)
                flat[idx] = orig - eps
                down = float(f(params).data)
                flat[idx] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError(f"grad_check: non-finite loss perturbing {name}[{idx}]")
                numeric = (up - down) / (2 * eps)
                err = abs(float(analytic.reshape(-1)[idx]) - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
        return worst
    finally:
        for k, t in params.items():
            t.data, t.grad = saved[k]
