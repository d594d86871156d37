"""Dense 2-D tensors with reverse-mode automatic differentiation.

Tensors wrap C-contiguous numpy arrays (float32 for training, float64
for gradient checking). Operations are free functions; when a ``Graph``
is active (as a context manager) and an input requires grad, the
operation appends a node to the graph's tape. ``Graph.backward`` then
replays the tape in reverse recording order, so every node is visited
exactly once and parents always precede children.

Every forward operation validates that its result is finite; NaN or Inf
anywhere aborts with :class:`NumericsError` naming the operation.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import NumericsError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


def dtype_for(precision: str):
    """Map a precision mode name ('f32' or 'f64') to a numpy dtype."""
    if precision == "f32":
        return np.float32
    if precision == "f64":
        return np.float64
    raise ValueError(f"unknown precision {precision!r}, expected 'f32' or 'f64'")


class Tensor:
    """A rows x cols array of floats, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        # Plain python data defaults to float32 (the training precision);
        # float32/float64 arrays keep their precision.
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are strictly 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype})"


def zeros(rows: int, cols: int, dtype=np.float32, requires_grad: bool = False,
          name: str = "") -> Tensor:
    return Tensor(np.zeros((rows, cols), dtype=dtype), requires_grad=requires_grad,
                  name=name)


# ---------------------------------------------------------------------------
# recording tape
# ---------------------------------------------------------------------------

_GRAPH_STACK: list["Graph"] = []


def active_graph() -> "Graph | None":
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Graph:
    """Recording tape for one forward pass; context manager.

    Nodes are appended in execution order, which is a topological order
    (an op's inputs exist before its output). ``backward`` walks the tape
    once in reverse. Parameters that never entered the tape simply keep
    ``grad is None``; callers treat that as a zero gradient.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _GRAPH_STACK.pop()
        if popped is not self:
            raise RuntimeError("graph context stack corrupted")

    def backward(self, loss: Tensor) -> None:
        """Accumulate dloss/dx into ``.grad`` of every tensor on the tape."""
        if loss.shape != (1, 1):
            raise ValueError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        if self._consumed:
            raise RuntimeError("backward was already called on this graph")
        self._consumed = True
        loss.grad = np.ones((1, 1), dtype=loss.data.dtype)
        for out, backward_fn in reversed(self.nodes):
            if out.grad is not None:
                backward_fn(out.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# PReLU is the only nondifferentiable operation in the package; the
# gradient checker records the sign pattern of every PReLU input so it
# can tell exactly when a finite-difference window straddles a kink.

_SIGN_TRACE: list[np.ndarray] | None = None


class record_activation_signs:
    """Collect (input > 0) masks of every prelu call inside the block."""

    def __enter__(self) -> list[np.ndarray]:
        global _SIGN_TRACE
        self._previous = _SIGN_TRACE
        _SIGN_TRACE = []
        return _SIGN_TRACE

    def __exit__(self, exc_type, exc, tb) -> None:
        global _SIGN_TRACE
        _SIGN_TRACE = self._previous


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    if not kernels.all_finite(data):
        raise NumericsError(f"{op} produced non-finite values")
    out = Tensor(data)
    graph = active_graph()
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        graph.nodes.append((out, backward_fn))
    return out


def _check_dtypes(op: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"{op}: mixed dtypes {sorted(map(str, dtypes))}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product (m x k) @ (k x n) -> (m x n)."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    _check_dtypes("matmul", a, b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make("matmul", data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            _accumulate(x, g.T)

    return _make("transpose", x.data.T, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    _check_dtypes("add", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g)

    return _make("add", a.data + b.data, (a, b), backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x n bias row to every row of an m x n tensor."""
    if bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit {x.shape}")
    _check_dtypes("add_bias", x, bias)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0, keepdims=True))

    return _make("add_bias", x.data + bias.data, (x, bias), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    _check_dtypes("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _make("mul", a.data * b.data, (a, b), backward)


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """scale * x + shift with python-float coefficients."""
    dt = x.data.dtype.type
    data = x.data * dt(scale) + dt(shift)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * dt(scale))

    return _make("affine", data, (x,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Column-wise concatenation; backward splits at the same boundaries."""
    if not parts:
        raise ShapeError("concat_cols: empty part list")
    rows = parts[0].rows
    for p in parts[1:]:
        if p.rows != rows:
            raise ShapeError(
                f"concat_cols: row mismatch, {parts[0].shape} vs {p.shape}")
    _check_dtypes("concat_cols", *parts)
    widths = [p.cols for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accumulate(p, g[:, offset:offset + w])
            offset += w

    return _make("concat_cols", data, tuple(parts), backward)


def take_row(x: Tensor, index: int) -> Tensor:
    """Select one row as a 1 x n tensor; backward scatters into that row."""
    if not 0 <= index < x.rows:
        raise IndexError(f"take_row: row {index} out of range for {x.shape}")

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g[0]
            _accumulate(x, full)

    return _make("take_row", x.data[index:index + 1].copy(), (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    y = kernels.softmax_rows(x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, kernels.softmax_rows_grad(y, g))

    return _make("softmax_rows", y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = kernels.sigmoid(x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, kernels.sigmoid_grad(y, g))

    return _make("sigmoid", y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = kernels.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, kernels.tanh_grad(y, g))

    return _make("tanh", y, (x,), backward)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with one trainable scalar slope (a 1x1 tensor)."""
    if slope.shape != (1, 1):
        raise ShapeError(f"prelu: slope must be 1x1, got {slope.shape}")
    _check_dtypes("prelu", x, slope)
    slope_value = float(slope.data[0, 0])
    if _SIGN_TRACE is not None:
        _SIGN_TRACE.append(x.data > 0)
    y = kernels.prelu(x.data, slope_value)

    def backward(g):
        gx, gslope = kernels.prelu_grad(x.data, slope_value, g)
        if x.requires_grad:
            _accumulate(x, gx)
        if slope.requires_grad:
            _accumulate(slope, np.array([[gslope]], dtype=slope.data.dtype))

    return _make("prelu", y, (x, slope), backward)


def cross_entropy(logits: Tensor, truth: int) -> Tensor:
    """-log softmax(logits)[truth] over a 1 x j logit row, via log-sum-exp."""
    if logits.rows != 1:
        raise ShapeError(f"cross_entropy: logits must be 1xj, got {logits.shape}")
    if not 0 <= truth < logits.cols:
        raise IndexError(
            f"cross_entropy: truth index {truth} out of range for {logits.cols} candidates")
    row = logits.data[0]
    m = row.max()
    shifted = row - m
    e = np.exp(shifted)
    total = e.sum()
    loss = np.log(total) + m - row[truth]
    data = np.array([[loss]], dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            p = e / total
            grad_row = p.copy()
            grad_row[truth] -= 1.0
            _accumulate(logits, g[0, 0] * grad_row[None, :])

    return _make("cross_entropy", data, (logits,), backward)


def mean_scalars(losses: Sequence[Tensor]) -> Tensor:
    """Mean of a nonempty list of 1x1 tensors (composed from add/affine)."""
    if not losses:
        raise ShapeError("mean_scalars: empty list")
    total = losses[0]
    for part in losses[1:]:
        total = add(total, part)
    return affine(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# optimizer step
# ---------------------------------------------------------------------------

def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """Plain SGD: p <- p - lr * g, in place. No momentum, no weight decay."""
    if len(params) != len(grads):
        raise ValueError(f"sgd_step: {len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ShapeError(f"sgd_step: grad {g.shape} vs param {p.data.shape}")
        p.data -= p.data.dtype.type(lr) * g
