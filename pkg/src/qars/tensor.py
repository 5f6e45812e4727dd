"""Dense tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`. When gradient recording is enabled and
at least one input requires a gradient, the result remembers its inputs and a
closure mapping the upstream gradient to per-input gradients. :func:`backward`
walks that graph once in reverse topological order.

There is no broadcasting: binary ops demand identical shapes, and the few ops
that need row-wise alignment (``linear``, ``layer_norm``) say so explicitly.
"""

from __future__ import annotations

import contextlib
import math
from collections.abc import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_grad_enabled = True


@contextlib.contextmanager
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
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def from_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result; ``backward_fn(g)`` returns one gradient (or None) per parent."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


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
    """Accumulate dloss/dleaf into ``.grad`` of every reachable leaf that requires grad."""
    if loss.data.ndim != 0:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    if loss.is_leaf:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    grads: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    loss.grad = seed


def _check_same(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=None if like is None else like.dtype)


# --- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return from_op(A @ B, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected 2-D tensor, got {a.shape}")
    return from_op(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.shape
    return from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Row-wise affine map ``x @ w + b`` for x [n×k], w [k×m], b [m]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: cannot multiply {x.shape} by {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
    X, W = x.data, w.data

    def bw(g):
        return g @ W.T, X.T @ g, g.sum(axis=0)

    return from_op(X @ W + b.data, (x, w, b), bw, "linear")


# --- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _const(a), _const(b, a)
    _check_same(a, b, "add")
    return from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _const(a), _const(b, a)
    _check_same(a, b, "sub")
    return from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _const(a), _const(b, a)
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return from_op(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)  # sign(0) == 0
    return from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return from_op(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return from_op(out, (a,), bw, "gelu")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; all other extents must agree."""
    if not tensors:
        raise DimensionError("concat: no inputs")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead or t.data.ndim != tensors[0].data.ndim:
            raise DimensionError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return from_op(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), bw, "concat")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return from_op(a.data[..., start:stop], (a,), bw, "slice_cols")


_BINARY = {"add": add, "sub": sub, "mul": mul}
_UNARY = {"abs": abs_, "tanh": tanh}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"elementwise {kind!r} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "concat_last_axis":
        if b is None:
            raise ValueError("concat_last_axis needs two operands")
        return concat([a, b])
    raise ValueError(f"unknown elementwise kind {kind!r}")


# --- reductions and row-wise ops ---------------------------------------------

def sum_(a: Tensor) -> Tensor:
    shape = a.shape
    return from_op(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g, dtype=a.dtype),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return from_op(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, g / n, dtype=a.dtype),), "mean")


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows ``table[idx]``; the backward scatter-adds repeated rows."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = table.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return from_op(table.data[idx], (table,), bw, "take_rows")


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax; entries where ``mask`` is False get probability 0."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return from_op(p, (a,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of x [n×d] then apply per-column gain/bias [d]."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    X = x.data
    mu = X.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(X.var(axis=1, keepdims=True) + eps)
    xhat = (X - mu) * inv
    G = gain.data

    def bw(g):
        dxhat = g * G
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return from_op(xhat * G + bias.data, (x, gain, bias), bw, "layer_norm")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return from_op(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    target = _const(target, pred)
    if pred.data.size == 0:
        raise ValueError("mse_loss: empty input")
    _check_same(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        d = g * 2.0 * diff / n
        return d, -d

    return from_op(np.asarray((diff * diff).mean()), (pred, target), bw, "mse")


# --- verification -------------------------------------------------------------

def grad_check(f: Callable, x, eps: float = 1e-4, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``x`` is a Tensor or a list of Tensors; ``f(x)`` must return a scalar Tensor.
    With ``max_coords`` only a seeded random subset of coordinates is probed.
    The relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.grad = None
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: non-finite function value")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    coords = [(i, j) for i, t in enumerate(xs) for j in range(t.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = xs[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f(x).data)
            flat[j] = orig - eps
            fm = float(f(x).data)
            flat[j] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"grad_check: non-finite value probing coordinate {j} of input {i}")
            num = (fp - fm) / (2.0 * eps)
            ana = float(analytic[i].reshape(-1)[j])
            denom = max(abs(ana), abs(num), 1e-8)
            worst = max(worst, abs(ana - num) / denom)
    for t in xs:
        t.grad = None
    return worst
