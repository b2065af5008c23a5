import random
from pathlib import Path

import numpy as np
import pytest

from tiedgo.goboard import Color, new_board

SGF_LETTERS = "abcdefghijklmnopqrs"


def random_game(seed, n_moves=120, size=19, pass_prob=0.0):
    """Random legal playout: list of (color, point or None), and the final board."""
    rng = random.Random(seed)
    board = new_board(size)
    moves = []
    for _ in range(n_moves):
        legal = sorted(board.legal_moves())
        if not legal or rng.random() < pass_prob:
            moves.append((board.to_move, None))
            board = board.pass_move()
            continue
        p = rng.choice(legal)
        moves.append((board.to_move, p))
        board = board.play(p).new_board
    return moves, board


def to_sgf(moves, size=19, setup_black=(), extra=""):
    def pt(p):
        return "" if p is None else SGF_LETTERS[p[1]] + SGF_LETTERS[p[0]]

    head = f"(;GM[1]FF[4]SZ[{size}]{extra}"
    if setup_black:
        head += "AB" + "".join(f"[{pt(p)}]" for p in setup_black)
    body = "".join(f";{'B' if c == Color.BLACK else 'W'}[{pt(p)}]" for c, p in moves)
    return head + body + ")"


def write_corpus(directory: Path, n_games: int, n_moves=40, seed=0, nested=True):
    directory.mkdir(parents=True, exist_ok=True)
    for g in range(n_games):
        moves, _ = random_game(seed * 100_003 + g, n_moves)
        sub = directory / f"batch{g % 3}" if nested else directory
        sub.mkdir(exist_ok=True)
        (sub / f"game{g:04d}.sgf").write_text(to_sgf(moves))
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    return write_corpus(tmp_path_factory.mktemp("sgf"), 30, n_moves=30, seed=7)


def game_examples(n_games, n_moves=20, seed=0):
    """Replayed training examples from random games."""
    from tiedgo.sgfio import parse_sgf, replay

    out = []
    for g in range(n_games):
        moves, _ = random_game(seed * 7919 + g, n_moves)
        out.extend(replay(parse_sgf(to_sgf(moves)), f"g{g}"))
    return out


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES = []


def acceptance_line(number, title, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {title}: {detail}".rstrip(": ")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
