"""Hot numeric kernels: numba-jitted fast path with a pure-numpy fallback.

The backend is chosen once at import time from the ``STEPQA_KERNELS``
environment variable: ``numba`` (default when numba imports cleanly) or
``numpy``. ``set_backend``/``use_backend`` switch at runtime, which the
benchmark script uses to time both paths in one process.

Matrix products are deliberately *not* here: ``np.matmul`` dispatches to
BLAS on both backends and a hand-rolled njit matmul would only lose.
The kernels below are the per-operation inner loops that numpy executes
with extra temporaries (softmax, gated activations, finiteness scans).

All kernels take C-contiguous 2-D float32/float64 arrays and preserve
the input dtype. Results of the two backends agree to roundoff, not
bitwise; determinism is guaranteed within a fixed backend.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from types import SimpleNamespace

import numpy as np

ENV_VAR = "STEPQA_KERNELS"


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def _np_softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_grad(y, gy):
    # dL/dx = y * (gy - sum_k gy_k y_k) per row
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def _np_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _np_sigmoid_grad(y, gy):
    return gy * y * (1.0 - y)


def _np_tanh(x):
    return np.tanh(x)


def _np_tanh_grad(y, gy):
    return gy * (1.0 - y * y)


def _np_prelu(x, slope):
    return np.where(x > 0, x, x * slope)


def _np_prelu_grad(x, slope, gy):
    neg = x <= 0
    gx = np.where(neg, gy * slope, gy)
    gslope = float((gy * np.where(neg, x, 0.0)).sum(dtype=np.float64))
    return gx, gslope


def _np_all_finite(x):
    return bool(np.isfinite(x).all())


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    softmax_rows=_np_softmax_rows,
    softmax_rows_grad=_np_softmax_rows_grad,
    sigmoid=_np_sigmoid,
    sigmoid_grad=_np_sigmoid_grad,
    tanh=_np_tanh,
    tanh_grad=_np_tanh_grad,
    prelu=_np_prelu,
    prelu_grad=_np_prelu_grad,
    all_finite=_np_all_finite,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def softmax_rows(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            m = x[i, 0]
            for j in range(1, x.shape[1]):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(x.shape[1]):
                v = np.exp(x[i, j] - m)
                out[i, j] = v
                s += v
            inv = 1.0 / s
            for j in range(x.shape[1]):
                out[i, j] = out[i, j] * inv
        return out

    @njit(cache=True)
    def softmax_rows_grad(y, gy):
        gx = np.empty_like(y)
        for i in range(y.shape[0]):
            dot = 0.0
            for j in range(y.shape[1]):
                dot += gy[i, j] * y[i, j]
            for j in range(y.shape[1]):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
        return gx

    @njit(cache=True)
    def sigmoid(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                if v >= 0.0:
                    out[i, j] = 1.0 / (1.0 + np.exp(-v))
                else:
                    e = np.exp(v)
                    out[i, j] = e / (1.0 + e)
        return out

    @njit(cache=True)
    def sigmoid_grad(y, gy):
        gx = np.empty_like(y)
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                gx[i, j] = gy[i, j] * y[i, j] * (1.0 - y[i, j])
        return gx

    @njit(cache=True)
    def tanh_grad(y, gy):
        gx = np.empty_like(y)
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                gx[i, j] = gy[i, j] * (1.0 - y[i, j] * y[i, j])
        return gx

    @njit(cache=True)
    def prelu(x, slope):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                out[i, j] = v if v > 0.0 else v * slope
        return out

    @njit(cache=True)
    def prelu_grad(x, slope, gy):
        gx = np.empty_like(x)
        gslope = 0.0
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                v = x[i, j]
                g = gy[i, j]
                if v > 0.0:
                    gx[i, j] = g
                else:
                    gx[i, j] = g * slope
                    gslope += g * v
        return gx, gslope

    @njit(cache=True)
    def all_finite(x):
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                if not np.isfinite(x[i, j]):
                    return False
        return True

    return SimpleNamespace(
        name="numba",
        softmax_rows=softmax_rows,
        softmax_rows_grad=softmax_rows_grad,
        sigmoid=sigmoid,
        sigmoid_grad=sigmoid_grad,
        tanh=tanh,
        tanh_grad=tanh_grad,
        prelu=prelu,
        prelu_grad=prelu_grad,
        all_finite=all_finite,
    )


def _load_backends():
    impls = {"numpy": NUMPY_KERNELS}
    try:
        impls["numba"] = _build_numba_kernels()
    except ImportError:
        pass
    return impls


_BACKENDS = _load_backends()
NUMBA_KERNELS = _BACKENDS.get("numba")


def _initial_backend():
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested:
        if requested not in ("numba", "numpy"):
            raise ValueError(
                f"{ENV_VAR} must be 'numba' or 'numpy', got {requested!r}"
            )
        if requested not in _BACKENDS:
            raise ImportError(
                f"{ENV_VAR}={requested} but numba is not importable"
            )
        return _BACKENDS[requested]
    return _BACKENDS.get("numba", NUMPY_KERNELS)


_active = _initial_backend()


def backend_name() -> str:
    """Name of the kernel backend currently in use."""
    return _active.name


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _active = _BACKENDS[name]


@contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend (used by tests and benchmarks)."""
    previous = _active.name
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


# Dispatching wrappers: one indirection so the backend can change at runtime.

def softmax_rows(x):
    return _active.softmax_rows(x)


def softmax_rows_grad(y, gy):
    return _active.softmax_rows_grad(y, gy)


def sigmoid(x):
    return _active.sigmoid(x)


def sigmoid_grad(y, gy):
    return _active.sigmoid_grad(y, gy)


def tanh(x):
    return _active.tanh(x)


def tanh_grad(y, gy):
    return _active.tanh_grad(y, gy)


def prelu(x, slope):
    return _active.prelu(x, slope)


def prelu_grad(x, slope, gy):
    return _active.prelu_grad(x, slope, gy)


def all_finite(x) -> bool:
    return _active.all_finite(x)
