"""Weight-tying structure for reflection-preserving layers.

An :class:`OrbitMap` partitions the raw coordinates of a weight array into
orbits under the 8 board symmetries; every orbit is one free parameter.
Tied weights are produced by gathering (:meth:`OrbitMap.expand`) and their
gradients by summing raw gradients over each orbit (:meth:`OrbitMap.reduce`).
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from ..symmetry import GROUP, permutation


class UnsupportedShapeError(ValueError):
    pass


class OrbitMap:
    """Maps each raw weight index (flattened) to an orbit id in ``[0, orbit_count)``."""

    def __init__(self, raw_shape: tuple[int, ...], orbit_of: np.ndarray):
        self.raw_shape = tuple(raw_shape)
        self.orbit_of = np.ascontiguousarray(orbit_of, dtype=np.int64).ravel()
        if self.orbit_of.size != int(np.prod(self.raw_shape)):
            raise ValueError("orbit_of must cover every raw index")
        self.orbit_count = int(self.orbit_of.max()) + 1 if self.orbit_of.size else 0
        self._order = np.argsort(self.orbit_of, kind="stable")
        self.sizes = np.bincount(self.orbit_of, minlength=self.orbit_count)
        self._starts = np.concatenate(([0], np.cumsum(self.sizes)[:-1]))

    @classmethod
    def from_canonical(cls, raw_shape, canonical: np.ndarray) -> "OrbitMap":
        # orbit ids numbered by their smallest raw member, so the map is deterministic
        _, orbit_of = np.unique(canonical, return_inverse=True)
        return cls(raw_shape, orbit_of)

    @classmethod
    def identity(cls, raw_shape) -> "OrbitMap":
        return cls(raw_shape, np.arange(int(np.prod(raw_shape))))

    @property
    def raw_size(self) -> int:
        return self.orbit_of.size

    @property
    def is_identity(self) -> bool:
        return self.orbit_count == self.raw_size

    @cached_property
    def orbit_members(self) -> list[np.ndarray]:
        return np.split(self._order, np.cumsum(self.sizes)[:-1])

    def expand(self, params: np.ndarray) -> np.ndarray:
        """``(..., orbit_count)`` free parameters -> ``(..., *raw_shape)`` tied weights."""
        return params[..., self.orbit_of].reshape(params.shape[:-1] + self.raw_shape)

    def reduce(self, raw_grad: np.ndarray) -> np.ndarray:
        """Sum a ``(..., *raw_shape)`` gradient over each orbit -> ``(..., orbit_count)``."""
        lead = raw_grad.shape[: raw_grad.ndim - len(self.raw_shape)]
        flat = raw_grad.reshape(lead + (self.raw_size,))
        if self.is_identity:
            return flat.copy()
        return np.add.reduceat(flat[..., self._order], self._starts, axis=-1)

    def project(self, raw: np.ndarray) -> np.ndarray:
        """Average raw weights over each orbit (closest tied weights, least squares)."""
        return self.reduce(raw) / self.sizes

    def __repr__(self) -> str:
        return f"OrbitMap(raw_shape={self.raw_shape}, orbit_count={self.orbit_count})"


def build_orbit_map_conv(k: int) -> OrbitMap:
    """Orbits of the ``k x k`` filter offsets under the symmetry group."""
    if k < 1 or k % 2 == 0:
        raise UnsupportedShapeError(f"tied filters need an odd kernel size, got {k}")
    canonical = np.min([permutation(g, k) for g in GROUP], axis=0)
    return OrbitMap.from_canonical((k, k), canonical)


def build_orbit_map_dense(out_shape: tuple[int, int], in_shape: tuple[int, int, int]) -> tuple[OrbitMap, OrbitMap]:
    """Orbit maps for a square fully connected layer.

    Returns ``(weights, bias)``.  The weight map is over ``(output point,
    input point)`` pairs, with a symmetry acting on both at once; it is
    shared by every input channel.  The bias map is over output points.
    """
    h, w = out_shape
    _, ih, iw = in_shape
    if h != w or ih != iw or h != ih:
        raise UnsupportedShapeError(f"tied dense layers need equal square shapes, got {out_shape} <- {in_shape}")
    m = h * w
    p = np.arange(m)[:, None]
    q = np.arange(m)[None, :]
    canonical = None
    bias_canonical = None
    for g in GROUP:
        perm = permutation(g, h)
        img = perm[p] * m + perm[q]
        canonical = img if canonical is None else np.minimum(canonical, img)
        bias_canonical = perm if bias_canonical is None else np.minimum(bias_canonical, perm)
    return OrbitMap.from_canonical((m, m), canonical), OrbitMap.from_canonical((h, w), bias_canonical)
