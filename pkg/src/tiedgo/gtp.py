"""Go Text Protocol (version 2) front end for a trained network.

The engine plays the network's top-ranked legal move with no search.  It
never resigns or scores, and it passes whenever the opponent has just
passed; once it has answered a pass with a pass it keeps passing until
``clear_board``.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Callable, Optional, TextIO, Union

from . import __version__
from .evaluator import predict_ranked
from .goboard import Board, Color, IllegalMoveError, Point, new_board
from .symnet import Network
from .trainer import load_checkpoint

log = logging.getLogger(__name__)

COLUMNS = "ABCDEFGHJKLMNOPQRSTUVWXYZ"


class GtpError(Exception):
    """Failure response; the message becomes the text after ``?``."""


def point_to_vertex(p: Optional[Point], size: int = 19) -> str:
    if p is None:
        return "pass"
    r, c = p
    if not (0 <= r < size and 0 <= c < size):
        raise ValueError(f"point {tuple(p)} outside a {size}x{size} board")
    return f"{COLUMNS[c]}{size - r}"


def vertex_to_point(v: str, size: int = 19) -> Optional[Point]:
    v = v.strip().upper()
    if v == "PASS":
        return None
    if len(v) < 2 or v[0] not in COLUMNS[:size] or not v[1:].isdigit():
        raise ValueError(f"invalid vertex {v!r}")
    row = size - int(v[1:])
    if not 0 <= row < size:
        raise ValueError(f"invalid vertex {v!r}")
    return Point(row, COLUMNS.index(v[0]))


def parse_color(s: str) -> Color:
    s = s.lower()
    if s in ("b", "black"):
        return Color.BLACK
    if s in ("w", "white"):
        return Color.WHITE
    raise GtpError("syntax error")


class GtpEngine:
    def __init__(self, net: Network, name: str = "tiedgo", model_id: str = ""):
        self.net = net
        self.name = name
        self.model_id = model_id
        self.size = net.board_size
        self.komi = 0.0
        self.quit = False
        self.commands: dict[str, Callable[[list[str]], str]] = {
            "protocol_version": lambda a: "2",
            "name": lambda a: self.name,
            "version": lambda a: __version__,
            "known_command": self.cmd_known_command,
            "list_commands": lambda a: "\n".join(self.commands),
            "boardsize": self.cmd_boardsize,
            "clear_board": self.cmd_clear_board,
            "komi": self.cmd_komi,
            "play": self.cmd_play,
            "genmove": self.cmd_genmove,
            "showboard": lambda a: "\n" + str(self.board),
            "quit": self.cmd_quit,
        }
        self.reset()

    def reset(self) -> None:
        self.board: Board = new_board(self.size)
        self.last_move: Optional[tuple[Color, Optional[Point]]] = None
        self.finished = False

    @property
    def opponent_passed_last(self) -> bool:
        return self.last_move is not None and self.last_move[1] is None

    # -- commands ----------------------------------------------------------

    def cmd_known_command(self, args):
        if len(args) != 1:
            raise GtpError("syntax error")
        return "true" if args[0] in self.commands else "false"

    def cmd_boardsize(self, args):
        if len(args) != 1 or not args[0].isdigit():
            raise GtpError("syntax error")
        if int(args[0]) != self.size:
            raise GtpError("unacceptable size")
        self.reset()
        return ""

    def cmd_clear_board(self, args):
        self.reset()
        return ""

    def cmd_komi(self, args):
        try:
            self.komi = float(args[0])
        except (IndexError, ValueError):
            raise GtpError("syntax error") from None
        return ""

    def cmd_play(self, args):
        if len(args) != 2:
            raise GtpError("syntax error")
        color = parse_color(args[0])
        try:
            p = vertex_to_point(args[1], self.size)
        except ValueError:
            raise GtpError("syntax error") from None
        board = self.board.with_to_move(color)
        if p is None:
            self.board = board.pass_move()
        else:
            try:
                self.board = board.play(p).new_board
            except IllegalMoveError as e:
                log.info("rejected play %s %s: %s", args[0], args[1], e.reason)
                raise GtpError("illegal move") from None
        self.last_move = (color, p)
        return ""

    def cmd_genmove(self, args):
        if len(args) != 1:
            raise GtpError("syntax error")
        color = parse_color(args[0])
        board = self.board.with_to_move(color)
        move: Optional[Point] = None
        if self.finished:
            pass
        elif self.last_move is not None and self.last_move[1] is None and self.last_move[0] != color:
            self.finished = True
        elif board.legal_mask().any():
            move = predict_ranked(self.net, board)[0][0]
        if move is None:
            self.board = board.pass_move()
        else:
            self.board = board.play(move).new_board
        self.last_move = (color, move)
        return point_to_vertex(move, self.size)

    def cmd_quit(self, args):
        self.quit = True
        return ""

    # -- protocol ----------------------------------------------------------

    def handle(self, line: str) -> Optional[str]:
        """Process one input line; returns the full response text or None for blank lines."""
        line = "".join(ch for ch in line if ch in "\t\n" or 32 <= ord(ch) != 127)
        line = line.split("#", 1)[0].replace("\t", " ").strip()
        if not line:
            return None
        parts = line.split()
        cid = ""
        if parts[0].isdigit():
            cid = parts.pop(0)
            if not parts:
                return f"?{cid} syntax error\n\n"
        cmd, args = parts[0], parts[1:]
        fn = self.commands.get(cmd)
        if fn is None:
            return f"?{cid} unknown command\n\n"
        try:
            out = fn(args)
        except GtpError as e:
            return f"?{cid} {e}\n\n"
        return f"={cid} {out}\n\n"


def run_gtp(model: Union[Network, str, Path], instream: TextIO = sys.stdin,
            outstream: TextIO = sys.stdout) -> int:
    """Serve GTP on a line stream until ``quit`` or end of input; returns the exit status."""
    model_id = ""
    if not isinstance(model, Network):
        model_id = Path(model).name
        model, _ = load_checkpoint(model)
    engine = GtpEngine(model, model_id=model_id)
    for line in instream:
        resp = engine.handle(line)
        if resp is None:
            continue
        outstream.write(resp)
        outstream.flush()
        if engine.quit:
            break
    return 0
