"""Go rules: stone placement, chains and liberties, capture, simple-ko, legality.

Boards are immutable values.  ``play`` returns a fresh board and never
mutates its argument.  Points are ``(row, col)`` with ``(0, 0)`` top-left;
internally the grid is a flat ``bytes`` in row-major order.

Suicide is illegal.  Simple-ko is detected structurally: after a capture of
exactly one stone by a lone stone that is left with a single liberty, the
vacated point becomes the ko point until the next move or pass.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .symmetry import Sym, apply_array, apply_point

EMPTY = 0


class Color(enum.IntEnum):
    BLACK = 1
    WHITE = 2

    @property
    def opponent(self) -> "Color":
        return Color.WHITE if self is Color.BLACK else Color.BLACK


def opponent(c: Color) -> Color:
    return c.opponent


class Point(NamedTuple):
    row: int
    col: int


class BoardError(ValueError):
    pass


class InvalidSizeError(BoardError):
    pass


class NotAStoneError(BoardError):
    pass


class OutOfBoundsError(BoardError, IndexError):
    pass


class IllegalMoveError(BoardError):
    """Raised by :func:`play`; ``reason`` is one of occupied, ko, suicide."""

    def __init__(self, point: Point, reason: str):
        super().__init__(f"illegal move at {tuple(point)}: {reason}")
        self.point = point
        self.reason = reason


@functools.lru_cache(maxsize=None)
def _neighbor_table(size: int) -> tuple[tuple[int, ...], ...]:
    table = []
    for idx in range(size * size):
        r, c = divmod(idx, size)
        nb = []
        if r > 0:
            nb.append(idx - size)
        if r < size - 1:
            nb.append(idx + size)
        if c > 0:
            nb.append(idx - 1)
        if c < size - 1:
            nb.append(idx + 1)
        table.append(tuple(nb))
    return tuple(table)


def _chain(grid, nbrs, start: int) -> tuple[list[int], set[int]]:
    """Flood fill from ``start``; returns (chain stones, liberty points)."""
    color = grid[start]
    stones = [start]
    seen = {start}
    libs = set()
    i = 0
    while i < len(stones):
        for n in nbrs[stones[i]]:
            v = grid[n]
            if v == EMPTY:
                libs.add(n)
            elif v == color and n not in seen:
                seen.add(n)
                stones.append(n)
        i += 1
    return stones, libs


def _has_other_liberty(grid, nbrs, start: int, exclude: int) -> bool:
    """True if the chain at ``start`` has a liberty other than ``exclude``."""
    color = grid[start]
    stack = [start]
    seen = {start}
    while stack:
        s = stack.pop()
        for n in nbrs[s]:
            v = grid[n]
            if v == EMPTY:
                if n != exclude:
                    return True
            elif v == color and n not in seen:
                seen.add(n)
                stack.append(n)
    return False


@dataclass(frozen=True)
class Board:
    size: int
    grid: bytes
    to_move: Color = Color.BLACK
    ko_point: Optional[Point] = None
    move_count: int = 0
    _nbrs: tuple = field(default=(), init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(self.grid) != self.size * self.size:
            raise BoardError("grid length does not match board size")
        object.__setattr__(self, "_nbrs", _neighbor_table(self.size))

    # -- queries -----------------------------------------------------------

    def __getitem__(self, p) -> int:
        r, c = p
        self._check(r, c)
        return self.grid[r * self.size + c]

    def _check(self, r: int, c: int) -> None:
        if not (0 <= r < self.size and 0 <= c < self.size):
            raise OutOfBoundsError(f"point {(r, c)} outside a {self.size}x{self.size} board")

    def points(self) -> Iterable[Point]:
        return (Point(*divmod(i, self.size)) for i in range(self.size * self.size))

    def to_array(self) -> np.ndarray:
        """Occupancy as an int8 ``size x size`` array (0 empty, 1 black, 2 white)."""
        return np.frombuffer(self.grid, dtype=np.int8).reshape(self.size, self.size).copy()

    def chain_and_liberties(self, p) -> tuple[set[Point], int]:
        r, c = p
        self._check(r, c)
        idx = r * self.size + c
        if self.grid[idx] == EMPTY:
            raise NotAStoneError(f"no stone at {(r, c)}")
        stones, libs = _chain(self.grid, self._nbrs, idx)
        return {Point(*divmod(s, self.size)) for s in stones}, len(libs)

    def liberty_grid(self) -> np.ndarray:
        """Per-point liberty count of the chain occupying it (0 on empty points)."""
        out = np.zeros(self.size * self.size, dtype=np.int16)
        done = bytearray(self.size * self.size)
        grid, nbrs = self.grid, self._nbrs
        for idx in range(len(grid)):
            if grid[idx] != EMPTY and not done[idx]:
                stones, libs = _chain(grid, nbrs, idx)
                n = len(libs)
                for s in stones:
                    out[s] = n
                    done[s] = 1
        return out.reshape(self.size, self.size)

    def illegal_reason(self, p) -> Optional[str]:
        """None if legal, otherwise occupied | ko | suicide."""
        r, c = p
        self._check(r, c)
        idx = r * self.size + c
        grid, nbrs = self.grid, self._nbrs
        if grid[idx] != EMPTY:
            return "occupied"
        if self.ko_point is not None and self.ko_point == (r, c):
            return "ko"
        me = self.to_move
        for n in nbrs[idx]:
            if grid[n] == EMPTY:
                return None
        for n in nbrs[idx]:
            other_lib = _has_other_liberty(grid, nbrs, n, idx)
            if grid[n] == me:
                if other_lib:
                    return None
            elif not other_lib:
                return None  # captures
        return "suicide"

    def is_legal(self, p) -> bool:
        return self.illegal_reason(p) is None

    def legal_moves(self) -> set[Point]:
        return {p for p in self.points() if self.illegal_reason(p) is None}

    def legal_mask(self) -> np.ndarray:
        """Boolean ``size*size`` vector of legal points in row-major order."""
        mask = np.zeros(self.size * self.size, dtype=bool)
        for i, p in enumerate(self.points()):
            if self.grid[i] == EMPTY:
                mask[i] = self.illegal_reason(p) is None
        return mask

    # -- transitions -------------------------------------------------------

    def play(self, p) -> "MoveOutcome":
        r, c = p
        reason = self.illegal_reason(p)
        if reason is not None:
            raise IllegalMoveError(Point(r, c), reason)
        size, nbrs = self.size, self._nbrs
        idx = r * size + c
        me = self.to_move
        grid = bytearray(self.grid)
        grid[idx] = me
        captured: list[int] = []
        for n in nbrs[idx]:
            if grid[n] == me.opponent:
                stones, libs = _chain(grid, nbrs, n)
                if not libs:
                    for s in stones:
                        grid[s] = EMPTY
                    captured.extend(stones)
        ko = None
        if len(captured) == 1:
            stones, libs = _chain(grid, nbrs, idx)
            if len(stones) == 1 and len(libs) == 1:
                ko = Point(*divmod(captured[0], size))
        board = Board(size, bytes(grid), me.opponent, ko, self.move_count + 1)
        return MoveOutcome(board, tuple(Point(*divmod(s, size)) for s in captured), ko)

    def pass_move(self) -> "Board":
        return Board(self.size, self.grid, self.to_move.opponent, None, self.move_count + 1)

    def with_to_move(self, color: Color) -> "Board":
        """Hand the turn to ``color``; a change of turn behaves like a pass."""
        if color == self.to_move:
            return self
        return Board(self.size, self.grid, color, None, self.move_count)

    def with_setup(self, black=(), white=()) -> "Board":
        """Pre-place stones (handicap/setup).  Clears any ko point."""
        grid = bytearray(self.grid)
        for color, pts in ((Color.BLACK, black), (Color.WHITE, white)):
            for r, c in pts:
                self._check(r, c)
                grid[r * self.size + c] = color
        board = Board(self.size, bytes(grid), self.to_move, None, self.move_count)
        lib = board.liberty_grid()
        if np.any((board.to_array() != EMPTY) & (lib == 0)):
            raise BoardError("setup stones leave a chain without liberties")
        return board

    def reflect(self, g: Sym) -> "Board":
        n = self.size
        arr = np.frombuffer(self.grid, dtype=np.int8).reshape(n, n)
        ko = None
        if self.ko_point is not None:
            ko = Point(*apply_point(self.ko_point[0], self.ko_point[1], g, n))
        return Board(n, apply_array(arr, g).tobytes(), self.to_move, ko, self.move_count)

    def __str__(self) -> str:
        sym = {EMPTY: ".", Color.BLACK: "X", Color.WHITE: "O"}
        rows = []
        for r in range(self.size):
            rows.append(" ".join(sym[v] for v in self.grid[r * self.size:(r + 1) * self.size]))
        return "\n".join(rows)


class MoveOutcome(NamedTuple):
    new_board: Board
    captured: tuple[Point, ...]
    ko_created: Optional[Point]


def new_board(size: int = 19) -> Board:
    if size < 2:
        raise InvalidSizeError(f"board size must be at least 2, got {size}")
    return Board(size, bytes(size * size))


def chain_and_liberties(board: Board, p) -> tuple[set[Point], int]:
    return board.chain_and_liberties(p)


def is_legal(board: Board, p) -> bool:
    return board.is_legal(p)


def play(board: Board, p) -> MoveOutcome:
    return board.play(p)


def legal_moves(board: Board) -> set[Point]:
    return board.legal_moves()
