"""The 8-element symmetry group of the square board.

Each element is a transpose (main-diagonal reflection) optionally followed
by a row flip and a column flip.  Horizontal, vertical and diagonal
reflections generate the whole group; rotations appear as compositions.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Sym(NamedTuple):
    transpose: bool
    flip_rows: bool
    flip_cols: bool

    def __repr__(self) -> str:
        if self == IDENTITY:
            return "Sym(identity)"
        parts = [n for n, on in zip(("T", "flipud", "fliplr"), self) if on]
        return "Sym(" + "+".join(parts) + ")"


GROUP: tuple[Sym, ...] = tuple(
    Sym(t, r, c) for t in (False, True) for r in (False, True) for c in (False, True)
)
IDENTITY = GROUP[0]
FLIP_COLS = Sym(False, False, True)   # mirror across the vertical axis
FLIP_ROWS = Sym(False, True, False)   # mirror across the horizontal axis
TRANSPOSE = Sym(True, False, False)   # mirror across the main diagonal


def apply_array(a: np.ndarray, g: Sym) -> np.ndarray:
    """Transform the last two (spatial) axes of ``a``; leading axes are untouched."""
    if g.transpose:
        a = np.swapaxes(a, -1, -2)
    if g.flip_rows:
        a = a[..., ::-1, :]
    if g.flip_cols:
        a = a[..., :, ::-1]
    return np.ascontiguousarray(a)


def apply_point(row: int, col: int, g: Sym, n: int) -> tuple[int, int]:
    """Where the value at ``(row, col)`` lands after ``apply_array(., g)``."""
    if g.transpose:
        row, col = col, row
    if g.flip_rows:
        row = n - 1 - row
    if g.flip_cols:
        col = n - 1 - col
    return row, col


def permutation(g: Sym, n: int) -> np.ndarray:
    """Flat index map: ``perm[i]`` is the destination of flat point ``i``."""
    rows, cols = np.divmod(np.arange(n * n), n)
    if g.transpose:
        rows, cols = cols, rows
    if g.flip_rows:
        rows = n - 1 - rows
    if g.flip_cols:
        cols = n - 1 - cols
    return rows * n + cols


def _table() -> tuple[dict[tuple[Sym, Sym], Sym], dict[Sym, Sym]]:
    # a 3x3 grid with distinct labels is enough to tell all 8 elements apart
    probe = np.arange(9).reshape(3, 3)
    images = {apply_array(probe, g).tobytes(): g for g in GROUP}
    comp = {}
    for a in GROUP:
        for b in GROUP:
            comp[a, b] = images[apply_array(apply_array(probe, b), a).tobytes()]
    inv = {a: next(b for b in GROUP if comp[a, b] == IDENTITY) for a in GROUP}
    return comp, inv


_COMPOSE, _INVERSE = _table()


def compose(a: Sym, b: Sym) -> Sym:
    """The element that applies ``b`` first, then ``a``."""
    return _COMPOSE[a, b]


def inverse(g: Sym) -> Sym:
    return _INVERSE[g]
