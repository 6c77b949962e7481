"""Forward/backward pairs for every layer type.

Each ``*_forward`` returns its output plus a cache; the matching
``*_backward`` takes the upstream gradient and that cache. Arrays keep the
dtype they come in with, so float64 inputs give a float64 check mode.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rasm.errors import DegenerateBatchError, ShapeError

BN_EPS = 1e-5


def conv_weight_count(size: int, c_in: int, c_out: int) -> int:
    """Learnable weights of a square convolution, excluding biases."""
    return size * size * c_in * c_out


def conv_cost(height: int, width: int, size: int, c_in: int, c_out: int) -> int:
    """Multiply-accumulates per sample for one pass over a ``height x width`` map."""
    return height * width * conv_weight_count(size, c_in, c_out)


def _same_pad(size: int) -> tuple[int, int]:
    return (size - 1) // 2, size // 2


def conv_output_hw(h: int, w: int, size: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        return -(-h // stride), -(-w // stride)
    if padding == "valid":
        if h < size or w < size:
            raise ShapeError(f"input {h}x{w} smaller than kernel {size}x{size}")
        return (h - size) // stride + 1, (w - size) // stride + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def conv2d_forward(x, w, b, stride: int = 1, padding: str = "same"):
    """Cross-correlation of ``x (B,H,W,C1)`` with ``w (S,S,C1,C2)`` plus bias."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2] or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {w.shape}")
    if b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match weights {w.shape}")
    B, H, W, C1 = x.shape
    S, C2 = w.shape[0], w.shape[3]
    ho, wo = conv_output_hw(H, W, S, stride, padding)
    if padding == "same":
        # pad enough for the strided output grid to stay in bounds
        th = max((ho - 1) * stride + S - H, 0)
        tw = max((wo - 1) * stride + S - W, 0)
        pads = ((0, 0), (th // 2, th - th // 2), (tw // 2, tw - tw // 2), (0, 0))
    else:
        pads = ((0, 0), (0, 0), (0, 0), (0, 0))
    xp = np.pad(x, pads)
    win = sliding_window_view(xp, (S, S), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (B, ho, wo, C1, S, S) -> rows of (S, S, C1) patches
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * ho * wo, S * S * C1)
    out = cols @ w.reshape(S * S * C1, C2) + b
    cache = (x.shape, xp.shape, pads, cols, w, stride, ho, wo)
    return out.reshape(B, ho, wo, C2), cache


def conv2d_backward(dy, cache):
    x_shape, xp_shape, pads, cols, w, stride, ho, wo = cache
    B = x_shape[0]
    S, C1, C2 = w.shape[0], w.shape[2], w.shape[3]
    d2 = dy.reshape(B * ho * wo, C2)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(S * S * C1, C2).T).reshape(B, ho, wo, S, S, C1)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for i in range(S):
        for j in range(S):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    H, W = x_shape[1], x_shape[2]
    dx = dxp[:, pads[1][0]:pads[1][0] + H, pads[2][0]:pads[2][0] + W, :]
    return dx, dw, db


def maxpool2d_forward(x, window: int = 2, stride: int = 2):
    if window != stride:
        raise ShapeError("only non-overlapping pooling (window == stride) is supported")
    B, H, W, C = x.shape
    if H % stride or W % stride:
        raise ShapeError(f"maxpool: {H}x{W} not divisible by stride {stride}")
    blocks = x.reshape(B, H // stride, stride, W // stride, stride, C).transpose(0, 1, 3, 5, 2, 4)
    flat = blocks.reshape(B, H // stride, W // stride, C, stride * stride)
    # argmax returns the first maximum, which fixes the tie rule
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, stride)


def maxpool2d_backward(dy, cache):
    x_shape, idx, s = cache
    B, H, W, C = x_shape
    flat = np.zeros(idx.shape + (s * s,), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    blocks = flat.reshape(B, H // s, W // s, C, s, s).transpose(0, 1, 4, 2, 5, 3)
    return blocks.reshape(x_shape)


def dense_forward(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape} / bias {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ d2, d2.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def batchnorm_forward(x, gamma, beta, mode: str, running_mean, running_var,
                      momentum: float = 0.9, eps: float = BN_EPS):
    """Normalize each feature (last axis) over every other axis.

    In train mode the running statistics arrays are updated in place.
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch normalization needs at least 2 samples in train mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    out = gamma * xhat + beta
    return out.astype(x.dtype, copy=False), (xhat, inv, gamma, mode, axes)


def batchnorm_backward(dy, cache):
    xhat, inv, gamma, mode, axes = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if mode != "train":
        return dxhat * inv, dgamma, dbeta
    n = np.prod([dy.shape[a] for a in axes])
    dx = (inv / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def dropout_forward(x, rate: float, mode: str, rng: np.random.Generator | None):
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return x * keep, keep


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def softmax(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_forward(x, wx, wh, b, h0=None, c0=None):
    """Unidirectional LSTM over ``x (B, T, D)`` returning every hidden state.

    Gate blocks in ``wx (D, 4H)``, ``wh (H, 4H)`` and ``b (4H,)`` are ordered
    input, forget, output, candidate.
    """
    B, T, D = x.shape
    H = wh.shape[0]
    if wx.shape != (D, 4 * H) or wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: input {x.shape} incompatible with wx {wx.shape}, wh {wh.shape}, b {b.shape}")
    h = np.zeros((B, H), dtype=x.dtype) if h0 is None else h0
    c = np.zeros((B, H), dtype=x.dtype) if c0 is None else c0
    xw = x @ wx + b
    hs = np.empty((B, T, H), dtype=x.dtype)
    gates = np.empty((B, T, 4 * H), dtype=x.dtype)
    cs = np.empty((B, T + 1, H), dtype=x.dtype)
    hprev = np.empty((B, T, H), dtype=x.dtype)
    cs[:, 0] = c
    for t in range(T):
        hprev[:, t] = h
        z = xw[:, t] + h @ wh
        ifo = _sigmoid(z[:, :3 * H])
        g = np.tanh(z[:, 3 * H:])
        c = ifo[:, H:2 * H] * c + ifo[:, :H] * g
        h = ifo[:, 2 * H:] * np.tanh(c)
        gates[:, t, :3 * H] = ifo
        gates[:, t, 3 * H:] = g
        cs[:, t + 1] = c
        hs[:, t] = h
    return hs, (x, wx, wh, gates, cs, hprev)


def lstm_backward(dhs, cache):
    x, wx, wh, gates, cs, hprev = cache
    B, T, D = x.shape
    H = wh.shape[0]
    dz = np.empty((B, T, 4 * H), dtype=dhs.dtype)
    dh = np.zeros((B, H), dtype=dhs.dtype)
    dc = np.zeros((B, H), dtype=dhs.dtype)
    for t in range(T - 1, -1, -1):
        i, f, o = gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H]
        g = gates[:, t, 3 * H:]
        tc = np.tanh(cs[:, t + 1])
        dh = dh + dhs[:, t]
        dc = dc + dh * o * (1 - tc * tc)
        dz[:, t, :H] = dc * g * i * (1 - i)
        dz[:, t, H:2 * H] = dc * cs[:, t] * f * (1 - f)
        dz[:, t, 2 * H:3 * H] = dh * tc * o * (1 - o)
        dz[:, t, 3 * H:] = dc * i * (1 - g * g)
        dc = dc * f
        dh = dz[:, t] @ wh.T
    dz2 = dz.reshape(B * T, 4 * H)
    dwx = x.reshape(B * T, D).T @ dz2
    dwh = hprev.reshape(B * T, H).T @ dz2
    db = dz2.sum(axis=0)
    dx = dz @ wx.T
    return dx, dwx, dwh, db, dh, dc


def bilstm_forward(x, fwd, bwd):
    """Concatenate a forward LSTM with a time-reversed backward LSTM.

    ``fwd`` and ``bwd`` are ``(wx, wh, b)`` triples sharing the hidden size.
    """
    if fwd[1].shape != bwd[1].shape:
        raise ShapeError(f"bilstm: hidden sizes differ ({fwd[1].shape} vs {bwd[1].shape})")
    hf, cf = lstm_forward(x, *fwd)
    hb, cb = lstm_forward(x[:, ::-1], *bwd)
    out = np.concatenate([hf, hb[:, ::-1]], axis=-1)
    return out, (cf, cb, fwd[1].shape[0])


def bilstm_backward(dy, cache):
    cf, cb, H = cache
    dxf, *gf = lstm_backward(dy[..., :H], cf)
    dxb, *gb = lstm_backward(dy[..., H:][:, ::-1], cb)
    dx = dxf + dxb[:, ::-1]
    return dx, tuple(gf[:3]), tuple(gb[:3])
