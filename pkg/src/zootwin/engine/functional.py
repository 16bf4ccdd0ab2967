"""Neural-network primitives on top of :mod:`zootwin.engine.tensor`.

Convolution and pooling are *valid* only (no padding). Each op checks
shapes before touching data and carries a hand-written backward.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .tensor import ShapeError, Tensor, _lift, _sigmoid

ACTIVATIONS = ("tanh", "sigmoid", "relu", "gelu")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 2-d cross-correlation.

    x: [N, C_in, H, W]; kernel: [C_out, C_in, kH, kW]; bias: [C_out].
    """
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = kernel.shape
    if c != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {c_in}")
    if stride < 1:
        raise ShapeError("conv2d stride must be >= 1")
    if kh > h or kw > w:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {h}x{w}")
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1

    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # columns laid out [N, C*kH*kW, H'*W'] so the product lands directly in NCHW
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    wmat = kernel.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, c_out, ho, wo)

    def bw(g):
        gflat = g.reshape(n, c_out, ho * wo)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = np.tensordot(gflat, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = gflat.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gflat).reshape(n, c, kh, kw, ho, wo)
            gx = np.zeros(x.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(out, parents, bw, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x [N, F_in], weight [F_out, F_in]."""
    x, weight = _lift(x), _lift(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and _lift(bias).shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias must have shape ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        bias = _lift(bias)
        out = out + bias.data

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = g @ wd
        if weight.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0, dtype=np.float64).astype(g.dtype)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, bw, "linear")


def maxpool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; a trailing remainder is dropped.

    Gradient goes to the first maximum in row-major window order.
    """
    x = _lift(x)
    if x.ndim != 4:
        raise ShapeError("maxpool2d expects [N, C, H, W]")
    n, c, h, w = x.shape
    if window < 1 or window > h or window > w:
        raise ShapeError(f"pool window {window} does not fit {h}x{w}")
    ho, wo = h // window, w // window
    k = window
    xd = x.data
    views = [xd[:, :, i : i + ho * k : k, j : j + wo * k : k] for i in range(k) for j in range(k)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        for pos, v in enumerate(views):
            hit = (v == out) & ~taken
            taken |= hit
            i, j = divmod(pos, k)
            gx[:, :, i : i + ho * k : k, j : j + wo * k : k] = g * hit
        return (gx,)

    return Tensor._make(out, (x,), bw, "maxpool2d")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = _lift(x)
    xd = x.data
    cdf = ndtr(xd).astype(xd.dtype, copy=False)

    def bw(g):
        pdf = (_INV_SQRT_2PI * np.exp(-0.5 * xd * xd)).astype(xd.dtype, copy=False)
        return (g * (cdf + xd * pdf),)

    return Tensor._make(xd * cdf, (x,), bw, "gelu")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return x.tanh()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "relu":
        return x.relu()
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_np(x: np.ndarray, kind: str) -> np.ndarray:
    """Gradient-free activation for inference paths."""
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "gelu":
        return x * ndtr(x).astype(x.dtype, copy=False)
    raise ValueError(f"unknown activation {kind!r}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Computed in f64 with max subtraction.
    """
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float((lse - z[rows, labels]).mean())
    dt = logits.data.dtype

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return ((p * (float(g) / n)).astype(dt),)

    return Tensor._make(np.asarray(loss, dtype=dt), (logits,), bw, "cross_entropy")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _lift(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        flat = (-1, d)
        gg = (g * xhat).reshape(flat).sum(axis=0) if gamma.requires_grad else None
        gbeta = g.reshape(flat).sum(axis=0) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gbeta

    return Tensor._make(out.astype(x.data.dtype, copy=False), (x, gamma, beta), bw, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * keep
