"""Stacked padded convolutions with one fully connected top layer.

The network maps encoded positions ``(B, C, n, n)`` to ``n*n`` logits; legal
move masks enter only through :func:`masked_softmax`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..encoder import EncodingConfig, pad_for_first_layer
from .layers import Conv2D, Dense, Layer, ShapeError


class NoLegalMoveError(ValueError):
    pass


class InvalidTargetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the masked-in entries of the last axis; masked-out entries are exactly 0."""
    logits = np.asarray(logits)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise NoLegalMoveError("mask has no legal entries")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0)
    return e / e.sum(axis=-1, keepdims=True)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.where(mask, np.exp(z), 0).sum(axis=-1, keepdims=True))
    return z - lse


class Network:
    """Move-prediction network.

    ``arch`` is a list of layer dicts, e.g.::

        [{"type": "conv", "filters": 48, "kernel": 7},
         {"type": "conv", "filters": 32, "kernel": 5},
         {"type": "dense"}]

    Convolutions use the rectifier (or tanh) and keep the spatial size.  The
    top layer is a dense layer, or a single-filter convolution, and is linear.
    """

    def __init__(self, arch: Sequence[dict], encoding: EncodingConfig = EncodingConfig(), *,
                 tied: bool = True, board_size: int = 19, activation: str = "relu",
                 dtype=np.float32):
        self.arch = [dict(a) for a in arch]
        self.encoding = encoding
        self.tied = tied
        self.board_size = board_size
        self.activation = activation
        self.dtype = np.dtype(dtype)
        if activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.layers: list[Layer] = self._build()

    def _build(self) -> list[Layer]:
        if not self.arch:
            raise ConfigError("architecture is empty")
        layers: list[Layer] = []
        ch = self.encoding.channels
        last = len(self.arch) - 1
        for i, spec in enumerate(self.arch):
            kind = spec.get("type")
            if kind == "conv":
                k = int(spec.get("kernel", 5))
                filters = int(spec.get("filters", 1))
                if k < 1 or k % 2 == 0:
                    raise ConfigError(f"layer {i}: kernel must be odd and positive, got {k}")
                if filters < 1:
                    raise ConfigError(f"layer {i}: need at least one filter")
                top = i == last
                if top and filters != 1:
                    raise ConfigError("a convolutional top layer must have exactly one filter")
                layers.append(Conv2D(ch, filters, k, tied=self.tied, pad=0 if i == 0 else None,
                                     activation="linear" if top else self.activation, dtype=self.dtype))
                ch = filters
            elif kind == "dense":
                if i != last:
                    raise ConfigError("the dense layer must be the top layer")
                layers.append(Dense(ch, self.board_size, tied=self.tied, dtype=self.dtype))
            else:
                raise ConfigError(f"unknown layer type {kind!r} at position {i}")
        return layers

    # -- parameters ----------------------------------------------------------

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params().items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads().items()}

    def set_param(self, name: str, value: np.ndarray) -> None:
        i, k = name.split(".")
        layer = self.layers[int(i)]
        cur = getattr(layer, k)
        if cur.shape != value.shape:
            raise ShapeError(f"{name}: expected shape {cur.shape}, got {value.shape}")
        setattr(layer, k, np.ascontiguousarray(value, dtype=self.dtype))

    @property
    def num_params(self) -> int:
        return sum(layer.num_params for layer in self.layers)

    def init_params(self, rng: np.random.Generator, std: float = 0.01) -> None:
        """Weights ~ N(0, std^2) per free parameter, biases zero."""
        for layer in self.layers:
            layer.weight = (rng.standard_normal(layer.weight.shape) * std).astype(self.dtype)
            layer.bias = np.zeros_like(layer.bias)

    def spec(self) -> dict:
        return {
            "arch": self.arch,
            "encoding": self.encoding.to_dict(),
            "tied": self.tied,
            "board_size": self.board_size,
            "activation": self.activation,
            "dtype": self.dtype.name,
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "Network":
        return cls(spec["arch"], EncodingConfig.from_dict(spec["encoding"]), tied=spec["tied"],
                   board_size=spec["board_size"], activation=spec.get("activation", "relu"),
                   dtype=np.dtype(spec.get("dtype", "float32")))

    # -- compute -------------------------------------------------------------

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        n = self.board_size
        if x.shape[1:] != (self.encoding.channels, n, n):
            raise ShapeError(f"expected input (B, {self.encoding.channels}, {n}, {n}), got {x.shape}")
        first = self.layers[0]
        if isinstance(first, Conv2D):
            x = pad_for_first_layer(x, (first.kernel - 1) // 2, self.encoding)
        return x

    def logits(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        h = self._prepare(x)
        for layer in self.layers:
            h = layer.forward(h, keep=keep)
        return h.reshape(h.shape[0], -1)

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        mask = np.asarray(mask, dtype=bool).reshape(z.shape)
        return masked_softmax(z, mask)

    def loss_and_grads(self, x: np.ndarray, mask: np.ndarray, targets) -> float:
        """Mean negative log likelihood of ``targets``; leaves gradients on the layers.

        ``targets`` are flat row-major indices.  Gradients are with respect to
        the free (orbit) parameters, i.e. summed over each orbit's members.
        """
        z = self.logits(x, keep=True)
        b = z.shape[0]
        mask = np.asarray(mask, dtype=bool).reshape(z.shape)
        targets = np.asarray(targets, dtype=np.int64).reshape(b)
        if not np.all(mask.any(axis=-1)):
            raise NoLegalMoveError("mask has no legal entries")
        if not np.all(mask[np.arange(b), targets]):
            raise InvalidTargetError("target is masked out")
        # at least double precision for the normaliser, whatever the network dtype
        logp = masked_log_softmax(z.astype(np.promote_types(z.dtype, np.float64)), mask)
        loss = float(-logp[np.arange(b), targets].mean())
        d = np.exp(logp)
        d[np.arange(b), targets] -= 1
        d = (d / b).astype(self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == len(self.layers) - 1 and isinstance(layer, Conv2D):
                d = d.reshape(b, 1, self.board_size, self.board_size)
            d = layer.backward(d, need_input_grad=i > 0)
        return loss


def forward(net: Network, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return net.forward(x, mask)


def backward(net: Network, x: np.ndarray, mask: np.ndarray, target) -> tuple[float, dict[str, np.ndarray]]:
    loss = net.loss_and_grads(x, mask, target)
    return loss, {k: v.copy() for k, v in net.named_grads().items()}


def set_tying(net: Network, enabled: bool) -> Network:
    """A fresh network with ``net``'s architecture and the given tying choice."""
    return Network(net.arch, net.encoding, tied=enabled, board_size=net.board_size,
                   activation=net.activation, dtype=net.dtype)
