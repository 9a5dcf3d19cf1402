"""Differentiable numeric primitives used by the dehazing network.

Every forward function returns its output plus the values the matching
backward function needs. Convolutions use same padding via shift-and-sum:
one (Cout, Cin) x (Cin, pixels) matrix product per kernel tap, which keeps
both directions as plain GEMMs. Attention operates on a token matrix of
shape (tokens, channels); the spatial variant mixes tokens (pixels), the
spectral variant mixes channels. Everything works at whatever float dtype
the inputs carry, so gradients can be verified in float64 while training
runs in float32.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

# Python-float constants: numpy scalar constants would silently promote
# float32 activations to float64.
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# convolution

def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Stack the k*k shifted views of a padded (Cin, H, W) array into a
    (Cin*k*k, H*W) matrix, one column per output pixel."""
    cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((cin, k, k, h * w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj, :] = xp[:, di : di + h, dj : dj + w].reshape(cin, h * w)
    return cols.reshape(cin * k * k, h * w)


def conv2d(x: np.ndarray, weight: np.ndarray, bias=None) -> np.ndarray:
    """Same-padded 2-D convolution of a (Cin, H, W) stack.

    ``weight`` has shape (Cout, Cin, k, k) with odd k; ``bias`` is (Cout,)
    or None. Output spatial size equals input spatial size. Internally the
    input unfolds to a column matrix so the whole convolution is one matrix
    product.
    """
    cout, cin, k, _ = weight.shape
    h, w = x.shape[1], x.shape[2]
    if k == 1:
        out = weight.reshape(cout, cin) @ x.reshape(cin, h * w)
    else:
        out = weight.reshape(cout, cin * k * k) @ _im2col(x, k, k // 2)
    out = out.reshape(cout, h, w)
    if bias is not None:
        out += bias[:, np.newaxis, np.newaxis]
    return out


def conv2d_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray, with_bias: bool = True):
    """Gradients of :func:`conv2d`; returns (dx, dweight, dbias)."""
    cout, cin, k, _ = weight.shape
    pad = k // 2
    h, w = x.shape[1], x.shape[2]
    dy_flat = dy.reshape(cout, h * w)
    if k == 1:
        dweight = (dy_flat @ x.reshape(cin, h * w).T).reshape(weight.shape)
        dx = (weight.reshape(cout, cin).T @ dy_flat).reshape(cin, h, w)
    else:
        cols = _im2col(x, k, pad)
        dweight = (dy_flat @ cols.T).reshape(weight.shape)
        # scatter-add each tap of the column gradient back onto the input
        dcols = (weight.reshape(cout, cin * k * k).T @ dy_flat).reshape(cin, k, k, h, w)
        dxp = np.zeros((cin, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
        for di in range(k):
            for dj in range(k):
                dxp[:, di : di + h, dj : dj + w] += dcols[:, di, dj]
        dx = np.ascontiguousarray(dxp[:, pad : pad + h, pad : pad + w])
    dbias = dy_flat.sum(axis=1) if with_bias else None
    return dx, dweight, dbias


# ---------------------------------------------------------------------------
# activations

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian error linear unit: x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Derivative Phi(x) + x * phi(x) applied to the upstream gradient."""
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, dy, 0.0)


# ---------------------------------------------------------------------------
# softmax

def softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    """Numerically shifted softmax along one axis."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int) -> np.ndarray:
    """Jacobian-vector product given the softmax output ``y``."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# attention over a (tokens, channels) matrix

def spatial_attention(tokens: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray):
    """Token-mixing attention: every output token is a convex combination
    of value tokens, weighted by row-softmaxed query-key scores.

    Returns ``(out, cache)`` with ``out`` of shape (tokens, channels).
    """
    q = tokens @ wq
    k = tokens @ wk
    v = tokens @ wv
    scale = 1.0 / math.sqrt(q.shape[1])
    grid = softmax((q @ k.T) * scale, axis=1)
    out = grid @ v
    return out, {"tokens": tokens, "q": q, "k": k, "v": v, "grid": grid, "scale": scale}


def spatial_attention_backward(dout: np.ndarray, cache: dict, wq, wk, wv):
    """Gradients of :func:`spatial_attention`; returns (dtokens, dwq, dwk, dwv)."""
    tokens, q, k, v = cache["tokens"], cache["q"], cache["k"], cache["v"]
    grid, scale = cache["grid"], cache["scale"]
    dv = grid.T @ dout
    dgrid = dout @ v.T
    dscores = softmax_backward(dgrid, grid, axis=1)
    dq = (dscores @ k) * scale
    dk = (dscores.T @ q) * scale
    dtokens = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dtokens, tokens.T @ dq, tokens.T @ dk, tokens.T @ dv


def spectral_attention(tokens: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray):
    """Channel-mixing attention: scores form a (channels, channels) grid,
    column-softmaxed so each output channel is a convex combination of
    value channels.
    """
    q = tokens @ wq
    k = tokens @ wk
    v = tokens @ wv
    scale = 1.0 / math.sqrt(q.shape[1])
    grid = softmax((k.T @ q) * scale, axis=0)
    out = v @ grid
    return out, {"tokens": tokens, "q": q, "k": k, "v": v, "grid": grid, "scale": scale}


def spectral_attention_backward(dout: np.ndarray, cache: dict, wq, wk, wv):
    """Gradients of :func:`spectral_attention`; returns (dtokens, dwq, dwk, dwv)."""
    tokens, q, k, v = cache["tokens"], cache["q"], cache["k"], cache["v"]
    grid, scale = cache["grid"], cache["scale"]
    dv = dout @ grid.T
    dgrid = v.T @ dout
    dscores = softmax_backward(dgrid, grid, axis=0)
    dk = (q @ dscores.T) * scale
    dq = (k @ dscores) * scale
    dtokens = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dtokens, tokens.T @ dq, tokens.T @ dk, tokens.T @ dv


def planes_to_tokens(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (H*W, C) token matrix, pixels in row-major order."""
    c = x.shape[0]
    return np.ascontiguousarray(x.reshape(c, -1).T)


def tokens_to_planes(tokens: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`planes_to_tokens`."""
    return np.ascontiguousarray(tokens.T).reshape(tokens.shape[1], h, w)
