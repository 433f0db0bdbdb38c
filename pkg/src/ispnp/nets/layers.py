"""Dense/conv/norm primitives, NCHW, float64, with reverse-mode partners.

Every function is pure in (weights, input). The `_vjp` partners return the
gradient with respect to the layer input only; network weights are fixed at
inference so their gradients are never formed. Convolutions are 3x3
cross-correlations with zero padding 1; the reverse-mode partner covers the
stride-1 case, which is the only one a gradient ever flows through.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GN_EPS = 1e-5


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_vjp(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return g * (s + x * s * (1.0 - s))


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """(B, C_in, H, W) -> (B, C_out, ceil(H/stride), ceil(W/stride))."""
    bsz, cin, h, wd = x.shape
    xp = np.zeros((bsz, cin, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bihwkl,oikl->bohw", win, w, optimize=True)
    return out + b[:, None, None]


def conv2d_vjp_input(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of stride-1 conv2d in its input: correlate with flipped taps."""
    return conv2d(
        g, w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3), np.zeros(w.shape[1])
    )


def group_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = GN_EPS
) -> np.ndarray:
    """Normalize over groups of 2 channels (channels/2 groups) per sample."""
    bsz, c, h, w = x.shape
    groups = max(c // 2, 1)
    xg = x.reshape(bsz, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    xn = ((xg - mu) / np.sqrt(var + eps)).reshape(bsz, c, h, w)
    return xn * gamma[:, None, None] + beta[:, None, None]


def group_norm_vjp_input(
    g: np.ndarray, x: np.ndarray, gamma: np.ndarray, eps: float = GN_EPS
) -> np.ndarray:
    bsz, c, h, w = x.shape
    groups = max(c // 2, 1)
    xg = x.reshape(bsz, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = (xg - mu) * inv
    gg = (g * gamma[:, None, None]).reshape(bsz, groups, -1)
    dx = (
        gg
        - gg.mean(axis=-1, keepdims=True)
        - xn * (gg * xn).mean(axis=-1, keepdims=True)
    ) * inv
    return dx.reshape(bsz, c, h, w)


def upsample2x(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor doubling of the two trailing spatial axes."""
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def upsample2x_vjp(g: np.ndarray) -> np.ndarray:
    """Adjoint of nearest doubling: sum each 2x2 block."""
    bsz, c, h2, w2 = g.shape
    return g.reshape(bsz, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def dense(v: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B, n_in) @ (n_out, n_in)^T + b."""
    return v @ w.T + b
