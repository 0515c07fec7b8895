"""Dense numeric primitives on row-major float32/float64 numpy arrays.

Arrays are the universal value carrier: rank 1-4, every dim >= 1, all
values finite after every operation (NaN/Inf raises NonFiniteError).
Operations are pure; the only in-place update is sgd_step, which demands
exclusive access to its parameter arrays.

matmul has two paths. The normative reference accumulates the inner
index in ascending order (enable with `serial_matmul`); the default path
delegates to numpy's BLAS, which must stay within 1e-12 relative of the
reference and is bitwise reproducible call-to-call on one machine.
"""

from __future__ import annotations

import functools
import math
from contextlib import contextmanager

import numpy as np

from .errors import ConfigurationError, DimensionError, LabelError, NonFiniteError, PoolSizeError
from .rng import Rng

F32 = np.dtype(np.float32)
F64 = np.dtype(np.float64)
_ALLOWED = (F32, F64)

_serial_matmul = False


def set_serial_matmul(enabled: bool) -> None:
    """Force the index-ascending reference path for all subsequent matmuls."""
    global _serial_matmul
    _serial_matmul = bool(enabled)


def serial_matmul_enabled() -> bool:
    return _serial_matmul


@contextmanager
def serial_matmul():
    prev = _serial_matmul
    set_serial_matmul(True)
    try:
        yield
    finally:
        set_serial_matmul(prev)


def _quiet(fn):
    """Silence numpy FP warnings inside an op; the finite check is the contract."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                         under="ignore"):
            return fn(*args, **kwargs)
    return wrapper


def tensor(data, dtype: np.dtype = F64) -> np.ndarray:
    """Build a validated dense tensor (rank 1-4, positive dims, finite values)."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    _check_dims(arr, "tensor")
    return _finite(arr, "tensor")


def _check_dims(a: np.ndarray, op: str) -> None:
    if a.dtype not in _ALLOWED:
        raise DimensionError(f"{op}: dtype {a.dtype} is not float32/float64")
    if not 1 <= a.ndim <= 4:
        raise DimensionError(f"{op}: rank {a.ndim} outside 1..4 (shape {a.shape})")
    if any(d < 1 for d in a.shape):
        raise DimensionError(f"{op}: every dim must be >= 1, got shape {a.shape}")


def _finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return a


def _same_dtype(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: mixed dtypes {a.dtype} vs {b.dtype}")


def _rank2(a: np.ndarray, op: str) -> None:
    _check_dims(a, op)
    if a.ndim != 2:
        raise DimensionError(f"{op}: expected rank-2, got shape {a.shape}")


@_quiet
def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _rank2(a, "matmul")
    _rank2(b, "matmul")
    _same_dtype(a, b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    if _serial_matmul:
        out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
        for i in range(a.shape[1]):  # ascending inner index = reference accumulation order
            out += a[:, i : i + 1] * b[i : i + 1, :]
    else:
        out = np.matmul(a, b)
    return _finite(out, "matmul")


@_quiet
def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    _rank2(a, "softmax_rows")
    _finite(a, "softmax_rows input")
    shifted = a - a.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return _finite(shifted, "softmax_rows")


@_quiet
def softmax_rows_backward(s: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient through softmax_rows given its output s and upstream grad."""
    inner = (grad * s).sum(axis=1, keepdims=True)
    return _finite(s * (grad - inner), "softmax_rows_backward")


@_quiet
def conv1x1(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-pixel channel mixing: w (C_out x C_in) applied to x (C_in x H x W), no bias."""
    _check_dims(x, "conv1x1")
    _rank2(w, "conv1x1 weights")
    if x.ndim != 3:
        raise DimensionError(f"conv1x1: input must be CxHxW, got shape {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise DimensionError(f"conv1x1: channel mismatch, weights {w.shape} vs input {x.shape}")
    c, h, wd = x.shape
    out = matmul(w, x.reshape(c, h * wd))
    return out.reshape(w.shape[0], h, wd)


@_quiet
def conv2d_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 zero-padded convolution preserving spatial size; kernel must be odd."""
    _check_dims(x, "conv2d_same")
    _check_dims(w, "conv2d_same weights")
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d_same: need CxHxW input and OxCxkxk weights, "
                             f"got {x.shape} and {w.shape}")
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"conv2d_same: kernel must be square and odd, got {k}x{k2}")
    if c_in != x.shape[0]:
        raise DimensionError(f"conv2d_same: channel mismatch, weights {w.shape} vs input {x.shape}")
    c, h, wd = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + wd] = x
    out = np.zeros((c_out, h, wd), dtype=x.dtype)
    flat = out.reshape(c_out, h * wd)
    for di in range(k):
        for dj in range(k):
            window = xp[:, di : di + h, dj : dj + wd].reshape(c, h * wd)
            flat += np.matmul(np.ascontiguousarray(w[:, :, di, dj]), window)
    return _finite(out, "conv2d_same")


@_quiet
def conv2d_same_backward(x: np.ndarray, w: np.ndarray,
                         grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d_same wrt input and weights."""
    c_out, c_in, k, _ = w.shape
    c, h, wd = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + wd] = x
    gflat = grad_out.reshape(c_out, h * wd)
    grad_w = np.zeros_like(w)
    grad_xp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            window = xp[:, di : di + h, dj : dj + wd].reshape(c, h * wd)
            grad_w[:, :, di, dj] = np.matmul(gflat, window.T)
            grad_xp[:, di : di + h, dj : dj + wd] += np.matmul(
                np.ascontiguousarray(w[:, :, di, dj]).T, gflat
            ).reshape(c, h, wd)
    grad_x = grad_xp[:, pad : pad + h, pad : pad + wd]
    return _finite(np.ascontiguousarray(grad_x), "conv2d_same_backward x"), \
        _finite(grad_w, "conv2d_same_backward w")


def pool_bounds(extent: int, n: int) -> list[tuple[int, int]]:
    """Adaptive bin boundaries over `extent` cells: bin i spans [floor(i*E/n), floor((i+1)*E/n)).

    The floor rule tiles the extent exactly (no gaps, no overlap), which the
    partition and adjoint contracts rely on.
    """
    if n > extent:
        raise PoolSizeError(f"pool size {n} exceeds extent {extent}")
    return [(i * extent // n, (i + 1) * extent // n) for i in range(n)]


@_quiet
def adaptive_avg_pool2d(x: np.ndarray, n: int) -> np.ndarray:
    """Mean-pool x (C x H x W) onto an n x n grid whose bins tile the input exactly."""
    _check_dims(x, "adaptive_avg_pool2d")
    if x.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool2d: input must be CxHxW, got shape {x.shape}")
    c, h, w = x.shape
    if n < 1 or n > h or n > w:
        raise PoolSizeError(f"pool size {n} does not fit spatial dims {h}x{w}")
    rows = pool_bounds(h, n)
    cols = pool_bounds(w, n)
    out = np.empty((c, n, n), dtype=x.dtype)
    for i, (rs, re) in enumerate(rows):
        for j, (cs, ce) in enumerate(cols):
            out[:, i, j] = x[:, rs:re, cs:ce].mean(axis=(1, 2))
    return _finite(out, "adaptive_avg_pool2d")


@_quiet
def max_over_rows(a: np.ndarray) -> np.ndarray:
    """Column-wise maxima as a 1 x n row."""
    _rank2(a, "max_over_rows")
    return _finite(a.max(axis=0, keepdims=True), "max_over_rows")


@_quiet
def cross_entropy_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-pixel negative log softmax probability and its analytic gradient."""
    _check_dims(logits, "cross_entropy_logits")
    if logits.ndim != 3:
        raise DimensionError(f"cross_entropy_logits: logits must be KxHxW, got {logits.shape}")
    k, h, w = logits.shape
    lab = np.asarray(labels)
    if lab.shape != (h, w):
        raise DimensionError(f"cross_entropy_logits: labels {lab.shape} vs spatial dims {(h, w)}")
    if lab.dtype.kind not in "iu":
        raise LabelError(f"labels must be integer class ids, got dtype {lab.dtype}")
    if lab.min() < 0 or lab.max() >= k:
        bad = np.argwhere((lab < 0) | (lab >= k))[0]
        raise LabelError(f"label {int(lab[tuple(bad)])} out of range [0, {k}) "
                         f"at pixel ({int(bad[0])}, {int(bad[1])})")
    flat = logits.reshape(k, h * w)
    shifted = flat - flat.max(axis=0, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=0, keepdims=True)
    idx = lab.reshape(-1)
    picked = shifted[idx, np.arange(h * w)] - np.log(expv.sum(axis=0))
    loss = float(-picked.mean())
    grad = probs.copy()
    grad[idx, np.arange(h * w)] -= 1.0
    grad /= h * w
    return loss, _finite(grad.reshape(k, h, w).astype(logits.dtype), "cross_entropy_logits")


@_quiet
def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float,
             momentum: float, velocity: list[np.ndarray]) -> None:
    """In-place heavy-ball update: v <- momentum*v + g; p <- p - lr*v."""
    if not len(params) == len(grads) == len(velocity):
        raise DimensionError(f"sgd_step: got {len(params)} params, {len(grads)} grads, "
                             f"{len(velocity)} velocities")
    for p, g, v in zip(params, grads, velocity):
        if not p.shape == g.shape == v.shape:
            raise DimensionError(f"sgd_step: shape mismatch {p.shape} vs {g.shape} vs {v.shape}")
        v *= momentum
        v += g
        p -= lr * v
        _finite(p, "sgd_step")


# Elementwise and layout plumbing. All pure, all finite-checked.

@_quiet
def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_dtype(a, b, "add")
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return _finite(a + b, "add")


@_quiet
def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_dtype(a, b, "sub")
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes differ, {a.shape} vs {b.shape}")
    return _finite(a - b, "sub")


@_quiet
def scale(a: np.ndarray, s: float) -> np.ndarray:
    return _finite(a * a.dtype.type(s), "scale")


@_quiet
def relu(a: np.ndarray) -> np.ndarray:
    return _finite(np.maximum(a, a.dtype.type(0)), "relu")


@_quiet
def exp(a: np.ndarray) -> np.ndarray:
    return _finite(np.exp(a), "exp")


@_quiet
def square(a: np.ndarray) -> np.ndarray:
    return _finite(a * a, "square")


def reshape(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if any(d < 1 for d in shape) or math.prod(shape) != a.size:
        raise DimensionError(f"reshape: {a.shape} has {a.size} elements, target {shape}")
    return a.reshape(shape)


def transpose2d(a: np.ndarray) -> np.ndarray:
    _rank2(a, "transpose2d")
    return np.ascontiguousarray(a.T)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_dtype(a, b, "concat_channels")
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"concat_channels: shapes {a.shape} and {b.shape} do not stack")
    return np.concatenate([a, b], axis=0)


def rng_fill_uniform(rng: Rng, shape: tuple[int, ...], half_width: float,
                     dtype: np.dtype = F64) -> np.ndarray:
    return rng.fill_uniform(shape, half_width, dtype)


def init_weight(rng: Rng, shape: tuple[int, ...], fan_in: int,
                dtype: np.dtype = F64) -> np.ndarray:
    """Uniform [-a, a] init with a = sqrt(1/fan_in)."""
    return rng.fill_uniform(shape, math.sqrt(1.0 / fan_in), dtype)
