"""Convolution and fully connected layers over orbit-parameterised weights.

Both layers keep their free parameters in ``weight``/``bias`` arrays whose
last axis indexes orbits.  An untied layer is simply one whose orbit map is
the identity, so tied and untied layers share every code path.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .orbits import OrbitMap, build_orbit_map_conv, build_orbit_map_dense


class ShapeError(ValueError):
    pass


def relu(x):
    return np.maximum(x, 0)


ACTIVATIONS = {
    "relu": (relu, lambda y: (y > 0).astype(y.dtype)),
    "tanh": (np.tanh, lambda y: 1 - y * y),
    "linear": (lambda x: x, lambda y: np.ones_like(y)),
}


class Layer:
    weight: np.ndarray
    bias: np.ndarray
    grad_weight: np.ndarray
    grad_bias: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def grads(self) -> dict[str, np.ndarray]:
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size


class Conv2D(Layer):
    """Stride-1 convolution.

    ``pad`` defaults to ``(k-1)//2`` (same-size output).  A layer fed with an
    input that is already padded uses ``pad=0``.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, *,
                 tied: bool = True, pad: int | None = None, activation: str = "relu",
                 dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.pad = (kernel - 1) // 2 if pad is None else pad
        self.tied = tied
        self.activation = activation
        self.orbit_map = build_orbit_map_conv(kernel) if tied else OrbitMap.identity((kernel, kernel))
        self.weight = np.zeros((out_channels, in_channels, self.orbit_map.orbit_count), dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def filters(self) -> np.ndarray:
        """Expanded ``(out, in, k, k)`` filter bank."""
        return self.orbit_map.expand(self.weight)

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv expects (B, {self.in_channels}, H, W), got {x.shape}")
        k, p = self.kernel, self.pad
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        b, c, hp, wp = x.shape
        h, w = hp - k + 1, wp - k + 1
        if h < 1 or w < 1:
            raise ShapeError("input smaller than the filter")
        win = sliding_window_view(x, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)
        wm = self.filters().reshape(self.out_channels, -1)
        pre = (cols @ wm.T).reshape(b, h, w, self.out_channels).transpose(0, 3, 1, 2)
        pre = pre + self.bias[None, :, None, None]
        y = ACTIVATIONS[self.activation][0](pre)
        if keep:
            self._cache = (cols, wm, (b, c, hp, wp), y)
        return y

    def backward(self, dy: np.ndarray, need_input_grad: bool = True):
        cols, wm, (b, c, hp, wp), y = self._cache
        k, p = self.kernel, self.pad
        h, w = hp - k + 1, wp - k + 1
        dpre = dy * ACTIVATIONS[self.activation][1](y)
        d2 = dpre.transpose(0, 2, 3, 1).reshape(b * h * w, self.out_channels)
        draw = (d2.T @ cols).reshape(self.out_channels, c, k, k)
        self.grad_weight = self.orbit_map.reduce(draw)
        self.grad_bias = d2.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = (d2 @ wm).reshape(b, h, w, c, k, k)
        dx = np.zeros((b, c, hp, wp), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:hp - p, p:wp - p]
        return dx


class Dense(Layer):
    """Fully connected map from ``(C, n, n)`` to an ``n x n`` grid of outputs.

    Tied: ``W[g.p, c, g.q] == W[p, c, q]`` and ``b[g.p] == b[p]`` for all 8
    symmetries ``g``, so the layer commutes with board reflections.
    """

    def __init__(self, in_channels: int, size: int, *, tied: bool = True,
                 activation: str = "linear", dtype=np.float32):
        self.in_channels = in_channels
        self.size = size
        self.tied = tied
        self.activation = activation
        m = size * size
        if tied:
            self.orbit_map, self.bias_map = build_orbit_map_dense((size, size), (in_channels, size, size))
        else:
            self.orbit_map, self.bias_map = OrbitMap.identity((m, m)), OrbitMap.identity((size, size))
        self.weight = np.zeros((in_channels, self.orbit_map.orbit_count), dtype=dtype)
        self.bias = np.zeros(self.bias_map.orbit_count, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def matrix(self) -> np.ndarray:
        """Expanded weights as ``(n*n outputs, C*n*n inputs)``."""
        m = self.size * self.size
        raw = self.orbit_map.expand(self.weight)  # (C, out, in)
        return raw.transpose(1, 0, 2).reshape(m, self.in_channels * m)

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        m = self.size * self.size
        if x.ndim != 4 or x.shape[1:] != (self.in_channels, self.size, self.size):
            raise ShapeError(f"dense expects (B, {self.in_channels}, {self.size}, {self.size}), got {x.shape}")
        xf = x.reshape(x.shape[0], -1)
        wm = self.matrix()
        pre = xf @ wm.T + self.bias_map.expand(self.bias).reshape(m)
        y = ACTIVATIONS[self.activation][0](pre)
        if keep:
            self._cache = (xf, wm, x.shape, y)
        return y

    def backward(self, dy: np.ndarray, need_input_grad: bool = True):
        xf, wm, shape, y = self._cache
        m = self.size * self.size
        dpre = dy * ACTIVATIONS[self.activation][1](y)
        dwm = dpre.T @ xf  # (out, C*in)
        draw = dwm.reshape(m, self.in_channels, m).transpose(1, 0, 2)
        self.grad_weight = self.orbit_map.reduce(draw)
        self.grad_bias = self.bias_map.reduce(dpre.sum(axis=0).reshape(self.size, self.size))
        if not need_input_grad:
            return None
        return (dpre @ wm).reshape(shape)
