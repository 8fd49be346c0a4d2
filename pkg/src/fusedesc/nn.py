"""Minimal dense-tensor layer set with explicit forward/backward passes.

Tensors are plain numpy arrays (float32 in production, float64 when the
gradient checker drives an op). Every op comes as a `fn(...) -> (out, cache)`
forward plus a `fn_backward(d_out, cache) -> grads` companion; there is no
autodiff graph and the layer set is closed by design. Trainable state lives
in :class:`Parameter`, updated by :func:`adam_step`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError, ShapeError

__all__ = [
    "Parameter",
    "adam_step",
    "bilinear_sample",
    "bilinear_sample_backward",
    "conv2d",
    "conv2d_backward",
    "grad_check",
    "he_normal",
    "l2_normalize",
    "l2_normalize_backward",
    "linear",
    "linear_backward",
    "maxpool2x2",
    "maxpool2x2_backward",
    "relu",
    "relu_backward",
]


def _finite_or_raise(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericsError(f"{what} contains NaN/Inf")
    return arr


@dataclass
class Parameter:
    """Trainable value plus its gradient accumulator and ADAM moments."""

    value: np.ndarray
    grad: np.ndarray | None = None
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value, dtype=np.float32)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def accumulate(self, g: np.ndarray) -> None:
        """Add `g` into the gradient buffer, creating it if absent."""
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g.astype(self.value.dtype, copy=False)


def he_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    """He-normal weight draw: std = sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


# ---------------------------------------------------------------------------
# conv2d: 3x3, stride 1, zero padding 1 (spatial size preserved)
# ---------------------------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 same-size convolution of a (C_in, H, W) map.

    Implemented as nine shifted GEMMs so BLAS does the heavy lifting;
    returns `(y, cache)` with y of shape (C_out, H, W).
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be (C, H, W), got {x.shape}")
    c_in, h, wd = x.shape
    if h < 3 or wd < 3:
        raise ShapeError(f"conv2d needs spatial dims >= 3, got {h}x{wd}")
    if w.ndim != 4 or w.shape[1:] != (c_in, 3, 3):
        raise ShapeError(
            f"conv2d weights must be (C_out, {c_in}, 3, 3), got {w.shape}"
        )
    c_out = w.shape[0]
    if b.shape != (c_out,):
        raise ShapeError(f"conv2d bias must be ({c_out},), got {b.shape}")

    dt = x.dtype
    xp = np.zeros((c_in, h + 2, wd + 2), dtype=dt)
    xp[:, 1:-1, 1:-1] = x
    yf = np.zeros((c_out, h * wd), dtype=dt)
    wv = w.astype(dt, copy=False)
    for di in range(3):
        for dj in range(3):
            xs = xp[:, di : di + h, dj : dj + wd].reshape(c_in, -1)
            yf += wv[:, :, di, dj] @ xs
    yf += b.astype(dt, copy=False)[:, None]
    y = yf.reshape(c_out, h, wd)
    _finite_or_raise(y, "conv2d output")
    return y, (xp, wv, (c_in, h, wd))


def conv2d_backward(dy: np.ndarray, cache):
    """Gradients (dx, dw, db) of a conv2d call."""
    xp, w, (c_in, h, wd) = cache
    c_out = w.shape[0]
    if dy.shape != (c_out, h, wd):
        raise ShapeError(f"conv2d_backward expects ({c_out}, {h}, {wd}), got {dy.shape}")
    dt = dy.dtype
    dyf = np.ascontiguousarray(dy.reshape(c_out, -1), dtype=dt)
    db = dyf.sum(axis=1)
    dw = np.empty_like(w, dtype=dt)
    dxp = np.zeros_like(xp, dtype=dt)
    for di in range(3):
        for dj in range(3):
            xs = xp[:, di : di + h, dj : dj + wd].reshape(c_in, -1)
            dw[:, :, di, dj] = dyf @ xs.T
            dxp[:, di : di + h, dj : dj + wd] += (w[:, :, di, dj].T @ dyf).reshape(
                c_in, h, wd
            )
    dx = dxp[:, 1:-1, 1:-1]
    return dx, dw, db


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2
# ---------------------------------------------------------------------------

def maxpool2x2(x: np.ndarray):
    """Max over non-overlapping 2x2 windows; ties go to the first cell in
    row-major order so the backward routing is deterministic."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool2x2 input must be (C, H, W), got {x.shape}")
    c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{wd}")
    xr = (
        x.reshape(c, h // 2, 2, wd // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, wd // 2, 4)
    )
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, x.dtype)


def maxpool2x2_backward(dy: np.ndarray, cache) -> np.ndarray:
    """Route each pooled gradient back to its argmax cell."""
    idx, (c, h, wd), dt = cache
    if dy.shape != (c, h // 2, wd // 2):
        raise ShapeError(f"maxpool2x2_backward expects {(c, h // 2, wd // 2)}, got {dy.shape}")
    dxr = np.zeros((c, h // 2, wd // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None].astype(dy.dtype), axis=-1)
    dx = (
        dxr.reshape(c, h // 2, wd // 2, 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h, wd)
    )
    return dx


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map of row vectors: (N, D_in) @ (D_out, D_in)^T + b."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear expects 2-D input/weights, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear inner dims disagree: input {x.shape} vs weights {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias must be ({w.shape[0]},), got {b.shape}")
    dt = x.dtype
    wv = w.astype(dt, copy=False)
    y = x @ wv.T + b.astype(dt, copy=False)
    _finite_or_raise(y, "linear output")
    return y, (x, wv)


def linear_backward(dy: np.ndarray, cache):
    x, w = cache
    dx = dy @ w
    dw = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu(x: np.ndarray):
    y = np.maximum(x, 0)
    return y, (x > 0)


def relu_backward(dy: np.ndarray, cache) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return dy * cache


# ---------------------------------------------------------------------------
# L2 normalization along the last axis
# ---------------------------------------------------------------------------

def l2_normalize(x: np.ndarray, eps: float = 1e-12):
    """x / max(||x||_2, eps) along the last axis (1-D vector or row batch)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    denom = np.maximum(n, eps)
    y = x / denom
    return y, (y, n, denom, eps)


def l2_normalize_backward(dy: np.ndarray, cache) -> np.ndarray:
    """Quotient-rule backward; degrades to dy/eps for near-zero vectors."""
    y, n, denom, eps = cache
    proj = (y * dy).sum(axis=-1, keepdims=True)
    dx_regular = (dy - y * proj) / denom
    dx_degenerate = dy / eps
    return np.where(n > eps, dx_regular, dx_degenerate)


# ---------------------------------------------------------------------------
# bilinear sampling of a dense (D, H_c, W_c) map at subpixel points
# ---------------------------------------------------------------------------

def bilinear_sample(dense: np.ndarray, points: np.ndarray):
    """Sample D-channel values at (u, v) grid coordinates, u along width.

    Points must lie inside [0, W_c-1] x [0, H_c-1]; callers clamp first.
    Returns `(out, cache)` with out of shape (N, D).
    """
    if dense.ndim != 3:
        raise ShapeError(f"bilinear_sample dense map must be (D, H, W), got {dense.shape}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"points must be (N, 2), got {pts.shape}")
    d, hc, wc = dense.shape
    u, v = pts[:, 0], pts[:, 1]
    if u.size and (
        u.min() < 0 or u.max() > wc - 1 or v.min() < 0 or v.max() > hc - 1
    ):
        raise ValueError(
            f"sample point outside [0,{wc - 1}]x[0,{hc - 1}]; clamp keypoints first"
        )
    u0 = np.minimum(np.floor(u), wc - 2).astype(np.int64) if wc > 1 else np.zeros_like(u, dtype=np.int64)
    v0 = np.minimum(np.floor(v), hc - 2).astype(np.int64) if hc > 1 else np.zeros_like(v, dtype=np.int64)
    fu = (u - u0).astype(dense.dtype)
    fv = (v - v0).astype(dense.dtype)
    u1 = np.minimum(u0 + 1, wc - 1)
    v1 = np.minimum(v0 + 1, hc - 1)

    flat = dense.reshape(d, -1)
    i00 = v0 * wc + u0
    i01 = v0 * wc + u1
    i10 = v1 * wc + u0
    i11 = v1 * wc + u1
    w00 = (1 - fv) * (1 - fu)
    w01 = (1 - fv) * fu
    w10 = fv * (1 - fu)
    w11 = fv * fu
    out = (
        flat[:, i00] * w00
        + flat[:, i01] * w01
        + flat[:, i10] * w10
        + flat[:, i11] * w11
    ).T
    cache = (dense.shape, dense.dtype, (i00, i01, i10, i11), (w00, w01, w10, w11))
    return np.ascontiguousarray(out), cache


def bilinear_sample_backward(dy: np.ndarray, cache) -> np.ndarray:
    """Scatter (N, D) gradients back onto the dense map by bilinear weight."""
    (d, hc, wc), dt, idx, wts = cache
    dd = np.zeros((hc * wc, d), dtype=dy.dtype)
    for i, w in zip(idx, wts):
        np.add.at(dd, i, dy * w[:, None])
    return dd.T.reshape(d, hc, wc)


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

def adam_step(
    param: Parameter,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Parameter:
    """Standard bias-corrected ADAM update in place; clears the grad buffer."""
    if param.grad is None:
        raise ValueError("adam_step: parameter has no populated gradient")
    g = param.grad
    _finite_or_raise(g, "adam_step gradient")
    param.step_count += 1
    t = param.step_count
    param.adam_m = beta1 * param.adam_m + (1 - beta1) * g
    param.adam_v = beta2 * param.adam_v + (1 - beta2) * (g * g)
    m_hat = param.adam_m / (1 - beta1**t)
    v_hat = param.adam_v / (1 - beta2**t)
    param.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.value.dtype)
    _finite_or_raise(param.value, "adam_step parameter value")
    param.grad = None
    return param


# ---------------------------------------------------------------------------
# finite-difference gradient checker
# ---------------------------------------------------------------------------

def grad_check(
    fn: Callable[[np.ndarray], tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]],
    x: np.ndarray,
    step: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn(x)` must return `(y, vjp)` where `vjp(dy)` gives dLoss/dx for the
    scalar loss `y.sum()`. Everything runs at float64; the relative error is
    |analytic - numeric| / max(1, |analytic| + |numeric|), maximized over
    elements.
    """
    x = np.asarray(x, dtype=np.float64)
    y, vjp = fn(x)
    analytic = np.asarray(vjp(np.ones_like(y)), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeError(f"vjp returned {analytic.shape}, expected {x.shape}")
    numeric = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_n = numeric.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + step
        lo_hi = fn(x)[0].sum()
        flat_x[i] = orig - step
        lo_lo = fn(x)[0].sum()
        flat_x[i] = orig
        flat_n[i] = (lo_hi - lo_lo) / (2 * step)
    denom = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float((np.abs(analytic - numeric) / denom).max())
