"""Stateful layer wrappers around the functional kernels.

A layer owns named parameters (``params``), their gradients (``grads``) and
non-trainable buffers. ``forward`` caches what ``backward`` needs; gradients
are overwritten, not accumulated, on every backward call.
"""
from __future__ import annotations

import math

import numpy as np

from rasm.errors import ShapeError
from rasm.nncore import functional as F


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x, mode: str):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def _uniform(rng, shape, limit, dtype):
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    def __init__(self, name, c_in, c_out, size=3, stride=1, padding="same", rng=None, dtype=np.float32):
        super().__init__()
        self.name, self.size, self.stride, self.padding = name, size, stride, padding
        self.c_in, self.c_out = c_in, c_out
        fan_in = size * size * c_in
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _uniform(rng, (size, size, c_in, c_out), math.sqrt(6.0 / fan_in), dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.c_in:
            raise ShapeError(f"{self.name}: expected {self.c_in} channels, got {c}")
        return (*F.conv_output_hw(h, w, self.size, self.stride, self.padding), self.c_out)

    def forward(self, x, mode):
        y, self._cache = F.conv2d_forward(x, self.params["weight"], self.params["bias"], self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, self.grads["weight"], self.grads["bias"] = F.conv2d_backward(dy, self._cache)
        return dx


class BatchNorm(Layer):
    def __init__(self, name, features, momentum=0.9, dtype=np.float32):
        super().__init__()
        self.name, self.features, self.momentum = name, features, momentum
        self.params["gamma"] = np.ones(features, dtype=dtype)
        self.params["beta"] = np.zeros(features, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(features, dtype=dtype)
        self.buffers["running_var"] = np.ones(features, dtype=dtype)

    def output_shape(self, shape):
        if shape[-1] != self.features:
            raise ShapeError(f"{self.name}: expected {self.features} features, got {shape[-1]}")
        return shape

    def forward(self, x, mode):
        y, self._cache = F.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], mode,
            self.buffers["running_mean"], self.buffers["running_var"], self.momentum)
        return y

    def backward(self, dy):
        dx, self.grads["gamma"], self.grads["beta"] = F.batchnorm_backward(dy, self._cache)
        return dx


class ReLU(Layer):
    def __init__(self, name):
        super().__init__()
        self.name = name

    def forward(self, x, mode):
        y, self._cache = F.relu_forward(x)
        return y

    def backward(self, dy):
        return F.relu_backward(dy, self._cache)


class MaxPool2D(Layer):
    def __init__(self, name, size=2):
        super().__init__()
        self.name, self.size = name, size

    def output_shape(self, shape):
        h, w, c = shape
        if h % self.size or w % self.size:
            raise ShapeError(f"{self.name}: {h}x{w} not divisible by pool size {self.size}")
        return h // self.size, w // self.size, c

    def forward(self, x, mode):
        y, self._cache = F.maxpool2d_forward(x, self.size, self.size)
        return y

    def backward(self, dy):
        return F.maxpool2d_backward(dy, self._cache)


class ColumnsToSequence(Layer):
    """``(B, H, W, C)`` feature maps to a ``(B, W, H*C)`` sequence of columns."""

    def __init__(self, name):
        super().__init__()
        self.name = name

    def output_shape(self, shape):
        h, w, c = shape
        return w, h * c

    def forward(self, x, mode):
        self._cache = x.shape
        B, H, W, C = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, W, H * C)

    def backward(self, dy):
        B, H, W, C = self._cache
        return dy.reshape(B, W, H, C).transpose(0, 2, 1, 3)


class Dense(Layer):
    def __init__(self, name, d_in, d_out, rng=None, dtype=np.float32):
        super().__init__()
        self.name, self.d_in, self.d_out = name, d_in, d_out
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _uniform(rng, (d_in, d_out), math.sqrt(6.0 / d_in), dtype)
        self.params["bias"] = np.zeros(d_out, dtype=dtype)

    def output_shape(self, shape):
        if shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: expected {self.d_in} input features, got {shape[-1]}")
        return (*shape[:-1], self.d_out)

    def forward(self, x, mode):
        y, self._cache = F.dense_forward(x, self.params["weight"], self.params["bias"])
        return y

    def backward(self, dy):
        dx, self.grads["weight"], self.grads["bias"] = F.dense_backward(dy, self._cache)
        return dx


class Dropout(Layer):
    def __init__(self, name, rate, rng=None):
        super().__init__()
        self.name, self.rate = name, rate
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x, mode):
        y, self._cache = F.dropout_forward(x, self.rate, mode, self.rng)
        return y

    def backward(self, dy):
        return F.dropout_backward(dy, self._cache)


class BiLSTM(Layer):
    def __init__(self, name, d_in, hidden, rng=None, dtype=np.float32):
        super().__init__()
        self.name, self.d_in, self.hidden = name, d_in, hidden
        rng = rng or np.random.default_rng(0)
        limit = 1.0 / math.sqrt(hidden)
        for direction in ("fwd", "bwd"):
            self.params[f"{direction}.wx"] = _uniform(rng, (d_in, 4 * hidden), limit, dtype)
            self.params[f"{direction}.wh"] = _uniform(rng, (hidden, 4 * hidden), limit, dtype)
            bias = np.zeros(4 * hidden, dtype=dtype)
            bias[hidden:2 * hidden] = 1.0  # forget gate
            self.params[f"{direction}.b"] = bias

    def _triple(self, direction):
        p = self.params
        return p[f"{direction}.wx"], p[f"{direction}.wh"], p[f"{direction}.b"]

    def output_shape(self, shape):
        if shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: expected {self.d_in} input features, got {shape[-1]}")
        return (*shape[:-1], 2 * self.hidden)

    def forward(self, x, mode):
        y, self._cache = F.bilstm_forward(x, self._triple("fwd"), self._triple("bwd"))
        return y

    def backward(self, dy):
        dx, gf, gb = F.bilstm_backward(dy, self._cache)
        for direction, g in (("fwd", gf), ("bwd", gb)):
            self.grads[f"{direction}.wx"], self.grads[f"{direction}.wh"], self.grads[f"{direction}.b"] = g
        return dx
