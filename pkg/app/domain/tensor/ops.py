from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from app.core.exceptions import ShapeMismatchException, ValidationException
from app.domain.tensor.tensor import Tensor, apply, constant, primitive


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchException(op, a.shape, b.shape)


# --- convolution ---------------------------------------------------------


def _conv2d_backward(g, ctx, x, k):
    p = k.shape[-1] // 2
    windows = ctx
    dk = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
    gp = np.pad(g, ((0, 0), (p, p), (p, p)))
    g_windows = sliding_window_view(gp, k.shape[2:], axis=(1, 2))
    dx = np.tensordot(k[:, :, ::-1, ::-1], g_windows, axes=([0, 2, 3], [0, 3, 4]))
    return dx, dk


@primitive("conv2d", _conv2d_backward)
def _conv2d(x, k):
    p = k.shape[-1] // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, k.shape[2:], axis=(1, 2))  # (C_in, H, W, kh, kw)
    out = np.tensordot(k, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out, windows


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Cross-correlation with zero 'same' padding: [C_in,H,W] * [C_out,C_in,k,k] -> [C_out,H,W]."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeMismatchException("conv2d", ("C_in", "H", "W"), x.shape)
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeMismatchException("conv2d kernel (odd, square)", (c_out, c_in, "k", "k"), kernel.shape)
    if c_in != x.shape[0]:
        raise ShapeMismatchException("conv2d input channels", (c_in, *x.shape[1:]), x.shape)
    return apply("conv2d", x, kernel)


# --- per-channel affine ----------------------------------------------------


def _channel_axes(x: np.ndarray) -> tuple:
    return tuple(range(1, x.ndim))


def _add_channel_backward(g, ctx, x, b):
    return g, g.sum(axis=_channel_axes(g))


@primitive("add_channel", _add_channel_backward)
def _add_channel(x, b):
    return x + b.reshape((-1,) + (1,) * (x.ndim - 1)), None


def add_channel(x: Tensor, b: Tensor) -> Tensor:
    """x[c, ...] + b[c]."""
    if b.ndim != 1 or b.shape[0] != x.shape[0]:
        raise ShapeMismatchException("add_channel", (x.shape[0],), b.shape)
    return apply("add_channel", x, b)


# --- group norm -------------------------------------------------------------


def _group_norm_backward(g, ctx, x, gamma, beta, groups, eps):
    xhat, inv_std = ctx
    c = x.shape[0]
    shape_c = (-1,) + (1,) * (x.ndim - 1)
    dgamma = (g * xhat).sum(axis=_channel_axes(g))
    dbeta = g.sum(axis=_channel_axes(g))
    dxhat = (g * gamma.reshape(shape_c)).reshape(groups, -1)
    xh = xhat.reshape(groups, -1)
    n = xh.shape[1]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=1, keepdims=True) - xh * (dxhat * xh).sum(axis=1, keepdims=True))
    return dx.reshape(x.shape), dgamma.reshape(c), dbeta.reshape(c)


@primitive("group_norm", _group_norm_backward)
def _group_norm(x, gamma, beta, groups, eps):
    xg = x.reshape(groups, -1)
    mean = xg.mean(axis=1, keepdims=True)
    var = ((xg - mean) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv_std).reshape(x.shape)
    shape_c = (-1,) + (1,) * (x.ndim - 1)
    return xhat * gamma.reshape(shape_c) + beta.reshape(shape_c), (xhat, inv_std)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    c = x.shape[0]
    if groups < 1 or c % groups:
        raise ValidationException(f"group_norm: channels ({c}) not divisible by groups ({groups})")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchException("group_norm scale/shift", (c,), gamma.shape if gamma.shape != (c,) else beta.shape)
    return apply("group_norm", x, gamma, beta, groups=int(groups), eps=float(eps))


# --- elementwise ------------------------------------------------------------


def _silu_backward(g, ctx, x):
    s = ctx
    return (g * (s * (1.0 + x * (1.0 - s))),)


@primitive("silu", _silu_backward)
def _silu(x):
    s = expit(x)
    return x * s, s


def silu(x: Tensor) -> Tensor:
    return apply("silu", x)


@primitive("add", lambda g, ctx, a, b: (g, g))
def _add(a, b):
    return a + b, None


@primitive("sub", lambda g, ctx, a, b: (g, -g))
def _sub(a, b):
    return a - b, None


@primitive("mul", lambda g, ctx, a, b: (g * b, g * a))
def _mul(a, b):
    return a * b, None


@primitive("scale", lambda g, ctx, x, c: (g * c,))
def _scale(x, c):
    return x * c, None


@primitive("sum", lambda g, ctx, x: (np.broadcast_to(g, x.shape).copy(),))
def _sum(x):
    return np.asarray(x.sum(), dtype=x.dtype), None


@primitive("reshape", lambda g, ctx, x, shape: (g.reshape(x.shape),))
def _reshape(x, shape):
    return x.reshape(shape).copy(), None


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a.data, b.data)
    return apply("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a.data, b.data)
    return apply("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a.data, b.data)
    return apply("mul", a, b)


def scale(x: Tensor, c: float) -> Tensor:
    return apply("scale", x, c=float(c))


def sum_all(x: Tensor) -> Tensor:
    return apply("sum", x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatchException("reshape", shape, x.shape)
    return apply("reshape", x, shape=shape)


# --- resampling -------------------------------------------------------------


def _upsample_backward(g, ctx, x):
    c, h, w = x.shape
    return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)


@primitive("upsample2x", _upsample_backward)
def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), None


def _downsample_backward(g, ctx, x):
    return (np.repeat(np.repeat(0.25 * g, 2, axis=1), 2, axis=2),)


@primitive("downsample2x", _downsample_backward)
def _downsample(x):
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    return 0.25 * ((a + b) + (c + d)), None


def nearest_upsample2x(x: Tensor) -> Tensor:
    if x.ndim != 3:
        raise ShapeMismatchException("nearest_upsample2x", ("C", "H", "W"), x.shape)
    return apply("upsample2x", x)


def avg_downsample2x(x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeMismatchException("avg_downsample2x", ("C", "2h", "2w"), x.shape)
    return apply("downsample2x", x)


# --- dense --------------------------------------------------------------------


def _linear_backward(g, ctx, x, w, b):
    return w.T @ g, np.outer(g, x), g


@primitive("linear", _linear_backward)
def _linear(x, w, b):
    return w @ x + b, None


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """weight[out, in] @ x[in] + bias[out]."""
    if x.ndim != 1 or weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ShapeMismatchException("linear", (weight.shape[-1],), x.shape)
    if bias.shape != (weight.shape[0],):
        raise ShapeMismatchException("linear bias", (weight.shape[0],), bias.shape)
    return apply("linear", x, weight, bias)


# --- structure --------------------------------------------------------------


def _concat_backward(g, ctx, *parts):
    bounds = np.cumsum([p.shape[0] for p in parts])[:-1]
    return tuple(np.split(g, bounds, axis=0))


@primitive("concat", _concat_backward)
def _concat(*parts):
    return np.concatenate(parts, axis=0), None


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel (first) axis."""
    tail = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != tail:
            raise ShapeMismatchException("concat", tail, p.shape[1:])
    return apply("concat", *parts)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout through a constant keep mask; identity when rate is 0 or rng is None."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return mul(x, constant(keep, dtype=x.dtype))
