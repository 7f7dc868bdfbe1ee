"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation the model needs lives here as a free function that takes
``Tensor`` arguments and returns a new ``Tensor`` wired into the graph.
``Tensor.backward()`` walks the graph in reverse topological order and
accumulates gradients into every tensor that requires them.
"""

from __future__ import annotations

import contextlib
import zlib
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5

_grad_enabled = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block (evaluation, probing)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An n-dimensional array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor; a scalar seeds with 1.0."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named, trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    @property
    def tensor(self) -> Tensor:
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), backward)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backward(g):
        a._accumulate(g * keep)

    return _make(np.where(keep, a.data, 0.0), (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    with np.errstate(divide="ignore"):
        return _make(np.log(a.data), (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(out, (a,), backward)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split ``a`` along ``axis`` into consecutive pieces of the given sizes."""
    if int(np.sum(sizes)) != a.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover extent {a.shape[axis]} of {a.shape}")
    pieces = []
    start = 0
    for size in sizes:
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(a.data)
            full[index] = g
            a._accumulate(full)

        pieces.append(_make(a.data[index], (a,), backward))
        start += size
    return pieces


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes batch and broadcast as in ``np.matmul``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight (+ bias)`` with ``weight`` stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# pooling / lookup
# ---------------------------------------------------------------------------

def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)

    return _make(table.data[ids], (table,), backward)


def segment_max(x: Tensor, lengths: Sequence[int]) -> Tensor:
    """Row-wise max over consecutive row segments of ``x``; one output row per segment.

    Ties send the gradient to the first maximal row.
    """
    lengths = [int(n) for n in lengths]
    if any(n <= 0 for n in lengths) or np.sum(lengths) != x.shape[0]:
        raise DimensionError(f"segment_max: lengths {lengths} do not partition {x.shape[0]} rows")
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    out = np.maximum.reduceat(x.data, starts, axis=0)
    seg = np.repeat(np.arange(len(lengths)), lengths)
    cols = np.arange(x.shape[1])
    # first row within each segment attaining the max, per column
    hit = x.data == out[seg]
    rows = np.empty((len(lengths), x.shape[1]), dtype=np.int64)
    for k, (s, n) in enumerate(zip(starts, lengths)):
        rows[k] = s + np.argmax(hit[s:s + n], axis=0)

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows, cols[None, :]] = g
        x._accumulate(full)

    return _make(out, (x,), backward)


def max_pool_rows(x: Tensor) -> Tensor:
    """Coordinate-wise max over the rows of a matrix, giving a vector."""
    return reshape(segment_max(x, [x.shape[0]]), (x.shape[1],))


# ---------------------------------------------------------------------------
# normalisation / regularisation
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            x._accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                 - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def dropout_rng(seed: int, step: int, site: str) -> np.random.Generator:
    """Independent stream per (seed, step, call site); order of calls is irrelevant."""
    return np.random.default_rng([seed, step, zlib.crc32(site.encode("utf-8"))])


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-p) at train time."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit random stream")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        x._accumulate(g * keep)

    return _make(x.data * keep, (x,), backward)


# ---------------------------------------------------------------------------
# softmax family and losses
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), backward)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions get weight exactly 0. A row without any valid position
    yields an all-zero row and passes no gradient back to its scores.
    ``mask`` broadcasts against ``scores`` (e.g. one N x N mask for all heads).
    """
    mask = np.asarray(mask, dtype=bool)
    try:
        mask = np.broadcast_to(mask, scores.shape)
    except ValueError:
        raise DimensionError(f"masked_softmax: mask {mask.shape} does not fit scores {scores.shape}") from None
    filled = np.where(mask, scores.data, -np.inf)
    row_max = filled.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(np.where(mask, scores.data - row_max, 0.0)), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    y = e / np.where(denom > 0.0, denom, 1.0)

    def backward(g):
        scores._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (scores,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = np.exp(out)

    def backward(g):
        x._accumulate(g - y * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), backward)


def _check_targets(n_rows: int, k: int, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n_rows,):
        raise DimensionError(f"targets of shape {targets.shape} for {n_rows} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise DimensionError(f"target index out of range 0..{k - 1}")
    return targets


def nll(log_probs: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer targets under row-wise log-probabilities."""
    n, k = log_probs.shape
    targets = _check_targets(n, k, targets)
    rows = np.arange(n)
    total = -log_probs.data[rows, targets].sum()
    denom = float(n) if reduction == "mean" else 1.0
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        full = np.zeros_like(log_probs.data)
        full[rows, targets] = -g / denom
        log_probs._accumulate(full)

    return _make(np.asarray(total / denom), (log_probs,), backward)


def cross_entropy(probs: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Mean (or summed) ``-log probs[i, target_i]`` over the rows of a probability matrix."""
    return nll(log(probs), targets, reduction)


# ---------------------------------------------------------------------------
# modules and initialisation
# ---------------------------------------------------------------------------

class Initializer:
    """Seeded parameter factory.

    Each parameter draws from its own stream keyed by (seed, name), so the
    values do not depend on construction order and two models that share a
    parameter name and seed start from identical weights.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def glorot(self, name: str, shape: tuple[int, int]) -> Parameter:
        limit = np.sqrt(6.0 / (shape[0] + shape[1]))
        return Parameter(name, self.rng(name).uniform(-limit, limit, size=shape))

    def normal(self, name: str, shape: tuple[int, ...], std: float = 1.0) -> Parameter:
        return Parameter(name, self.rng(name).normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return Parameter(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return Parameter(name, np.ones(shape))


class Module:
    """Minimal container: parameters are discovered by walking attributes."""

    def _children(self) -> Iterable:
        for value in vars(self).values():
            if isinstance(value, (Parameter, Module)):
                yield value
            elif isinstance(value, dict):
                yield from (v for v in value.values() if isinstance(v, (Parameter, Module)))
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, (Parameter, Module)))

    def named_parameters(self) -> dict[str, Parameter]:
        """All parameters keyed by their unique name, in lexicographic order."""
        found: dict[str, Parameter] = {}
        pending = [self]
        while pending:
            module = pending.pop()
            for child in module._children():
                if isinstance(child, Parameter):
                    if child.name in found and found[child.name] is not child:
                        raise ValueError(f"duplicate parameter name {child.name!r}")
                    found[child.name] = child
                else:
                    pending.append(child)
        return {name: found[name] for name in sorted(found)}

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, init: Initializer, name: str, d_in: int, d_out: int, bias: bool = True):
        self.weight = init.glorot(f"{name}.weight", (d_in, d_out))
        self.bias = init.zeros(f"{name}.bias", (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, init: Initializer, name: str, d: int):
        self.gain = init.ones(f"{name}.gain", (d,))
        self.bias = init.zeros(f"{name}.bias", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare backprop against central differences for a scalar-valued ``fn``.

    Returns the largest relative error over all input entries.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    fn(*inputs).backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def value() -> float:
        with no_grad():
            return float(fn(*inputs).data)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        worst = max(worst, max_relative_error(a, numerical_gradient(value, t.data, eps)))
    return worst
