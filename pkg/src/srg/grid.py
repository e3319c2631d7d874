"""Row-major layout of a length-n solution vector on an (h, w) grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridTensor:
    """``values`` is C x h x w; ``pad_mask`` is True on real-variable cells."""

    values: np.ndarray
    pad_mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ValueError("values must be C x h x w")
        mask = np.asarray(self.pad_mask, bool)
        if mask.shape != v.shape[1:]:
            raise ValueError(f"mask shape {mask.shape} does not match grid {v.shape[1:]}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "pad_mask", mask)

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def n(self) -> int:
        return int(self.pad_mask.sum())


def grid_mask(n: int, h: int, w: int) -> np.ndarray:
    if n > h * w:
        raise ValueError(f"n={n} does not fit a {h}x{w} grid")
    mask = np.zeros(h * w, bool)
    mask[:n] = True
    return mask.reshape(h, w)


def reshape_to_grid(x, h: int, w: int) -> GridTensor:
    """Fill the first n cells row-major; the rest are zero and masked out."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.shape[0]
    mask = grid_mask(n, h, w)
    flat = np.zeros(h * w, dtype=x.dtype)
    flat[:n] = x
    return GridTensor(flat.reshape(1, h, w), mask)


def flatten_from_grid(g: GridTensor, channel: int = 0) -> np.ndarray:
    return g.values[channel].reshape(-1)[: g.n].copy()


def choose_grid(n: int) -> tuple[int, int]:
    """Most square (h, w) with h * w == n when a factor pair exists within a
    2:1 aspect; otherwise the smallest near-square grid that holds n."""
    if n < 1:
        raise ValueError("n must be positive")
    r = int(math.isqrt(n))
    for h in range(r, 0, -1):
        if n % h == 0:
            w = n // h
            if w <= 2 * h:
                return h, w
            break
    h = int(math.ceil(math.sqrt(n)))
    w = int(math.ceil(n / h))
    return h, w
