"""Board -> binary feature planes, always from the side to move's point of view.

Channel layout (in order, each optional block only when enabled):

    basic:      [own stones, opponent stones]
    liberties:  [own 1 lib, own 2 libs, own >=3 libs, opp 1, opp 2, opp >=3]
    ko plane:   the simple-ko point, if any
    edge plane: zeros on the board; becomes a ring of ones once padded
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .goboard import EMPTY, Board
from .symmetry import Sym, apply_array

BOARD_SIZE = 19


class UnsupportedSizeError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingConfig:
    use_liberties: bool = True
    use_ko_plane: bool = True
    use_edge_channel: bool = True

    @property
    def channels(self) -> int:
        return (6 if self.use_liberties else 2) + int(self.use_ko_plane) + int(self.use_edge_channel)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingConfig":
        return cls(**{k: bool(d[k]) for k in ("use_liberties", "use_ko_plane", "use_edge_channel") if k in d})


def encode(board: Board, cfg: EncodingConfig, dtype=np.float32, *, check_size: bool = True) -> np.ndarray:
    """Return a ``(channels, n, n)`` array of 0/1 values."""
    n = board.size
    if check_size and n != BOARD_SIZE:
        raise UnsupportedSizeError(f"encoder expects a {BOARD_SIZE}x{BOARD_SIZE} board, got {n}x{n}")
    grid = board.to_array()
    me = int(board.to_move)
    own = grid == me
    opp = (grid != EMPTY) & ~own
    out = np.zeros((cfg.channels, n, n), dtype=dtype)
    if cfg.use_liberties:
        libs = board.liberty_grid()
        buckets = (libs == 1, libs == 2, libs >= 3)
        for i, b in enumerate(buckets):
            out[i][own & b] = 1
            out[3 + i][opp & b] = 1
        ch = 6
    else:
        out[0][own] = 1
        out[1][opp] = 1
        ch = 2
    if cfg.use_ko_plane:
        if board.ko_point is not None:
            out[ch][board.ko_point] = 1
        ch += 1
    # the edge plane (last channel, if any) stays zero on the board itself
    return out


def encode_batch(boards: Sequence[Board], cfg: EncodingConfig, dtype=np.float32) -> np.ndarray:
    if not boards:
        return np.zeros((0, cfg.channels, BOARD_SIZE, BOARD_SIZE), dtype=dtype)
    return np.stack([encode(b, cfg, dtype, check_size=False) for b in boards])


def pad_for_first_layer(t: np.ndarray, pad: int, cfg: EncodingConfig) -> np.ndarray:
    """Zero-pad the spatial axes by ``pad``; the edge plane is padded with ones.

    Works on a single ``(C, n, n)`` tensor or a ``(B, C, n, n)`` batch.
    """
    if pad < 0:
        raise ValueError("pad must be non-negative")
    if pad == 0:
        return t
    widths = [(0, 0)] * (t.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(t, widths)
    if cfg.use_edge_channel:
        edge = out[..., -1, :, :]
        edge[..., :pad, :] = 1
        edge[..., -pad:, :] = 1
        edge[..., :, :pad] = 1
        edge[..., :, -pad:] = 1
    return out


def reflect_tensor(t: np.ndarray, g: Sym) -> np.ndarray:
    """Apply ``g`` to the spatial layout of every channel identically."""
    if t.shape[-1] != t.shape[-2]:
        raise ValueError("reflect_tensor needs square spatial dimensions")
    return apply_array(t, g)
