"""Move-prediction metrics: accuracy, mean rank, mean probability, and curves.

Ranks are 1-based among legal moves only.  Ties in probability are broken
by row-major point order, so a uniform predictor ranks points top-left first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .encoder import encode
from .goboard import Board, Point
from .sgfio import DatasetManifest
from .symnet import Network, NoLegalMoveError, masked_softmax
from .trainer import EncodedExamples

BUCKET = 10
TOPK = tuple(range(1, 51)) + (361,)  # k=361 covers every point: always 1.0


@dataclass
class Metrics:
    accuracy: float
    mean_rank: float
    mean_probability: float
    count: int

    def summary(self) -> str:
        return (f"accuracy={self.accuracy:.4f} mean_rank={self.mean_rank:.4f} "
                f"mean_probability={self.mean_probability:.4f} count={self.count}")


@dataclass
class Curves:
    accuracy_by_move_number: dict[int, float] = field(default_factory=dict)
    count_by_move_number: dict[int, int] = field(default_factory=dict)
    topk_accuracy: dict[int, float] = field(default_factory=dict)

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        by_move = d / "accuracy_by_move_number.tsv"
        with open(by_move, "w") as f:
            f.write("first_move\tlast_move\tcount\taccuracy\n")
            for b, acc in sorted(self.accuracy_by_move_number.items()):
                f.write(f"{b}\t{b + BUCKET - 1}\t{self.count_by_move_number[b]}\t{acc:.6f}\n")
        topk = d / "topk_accuracy.tsv"
        with open(topk, "w") as f:
            f.write("k\taccuracy\n")
            for k, acc in sorted(self.topk_accuracy.items()):
                f.write(f"{k}\t{acc:.6f}\n")
        return [by_move, topk]


def target_ranks(probs: np.ndarray, mask: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-based rank of each target among legal points, and its probability."""
    b, m = probs.shape
    rows = np.arange(b)
    pt = probs[rows, targets]
    idx = np.arange(m)[None, :]
    above = mask & ((probs > pt[:, None]) | ((probs == pt[:, None]) & (idx < targets[:, None])))
    return 1 + above.sum(axis=1), pt


def metrics_from_ranks(ranks: np.ndarray, probs_of_target: np.ndarray, move_numbers: np.ndarray,
                       ks: Iterable[int] = TOPK) -> tuple[Metrics, Curves]:
    n = len(ranks)
    if n == 0:
        raise ValueError("no examples to evaluate")
    hit = ranks == 1
    metrics = Metrics(float(hit.mean()), float(ranks.mean()), float(probs_of_target.mean()), n)
    curves = Curves()
    buckets = (np.asarray(move_numbers) - 1) // BUCKET * BUCKET + 1
    for b in np.unique(buckets):
        sel = buckets == b
        curves.accuracy_by_move_number[int(b)] = float(hit[sel].mean())
        curves.count_by_move_number[int(b)] = int(sel.sum())
    for k in ks:
        curves.topk_accuracy[int(k)] = float((ranks <= k).mean())
    return metrics, curves


def predict_ranked(net: Network, board: Board) -> list[tuple[Point, float]]:
    """Legal moves with their masked-softmax probabilities, best first."""
    mask = board.legal_mask()
    if not mask.any():
        raise NoLegalMoveError("no legal moves on this board")
    x = encode(board, net.encoding, net.dtype, check_size=False)
    probs = masked_softmax(net.logits(x)[0].astype(np.float64), mask)
    legal = np.flatnonzero(mask)
    order = legal[np.lexsort((legal, -probs[legal]))]
    n = board.size
    return [(Point(*divmod(int(i), n)), float(probs[i])) for i in order]


def evaluate_examples(net: Network, data, batch_size: int = 256,
                      ks: Iterable[int] = TOPK) -> tuple[Metrics, Curves]:
    """Metrics over an :class:`~tiedgo.trainer.EncodedExamples` set."""
    ranks, pts = [], []
    for lo in range(0, len(data), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(data)))
        x, m, t = data.batch(idx, net.dtype)
        probs = masked_softmax(net.logits(x).astype(np.float64), m)
        r, p = target_ranks(probs, m, t)
        ranks.append(r)
        pts.append(p)
    if not ranks:
        raise ValueError("no examples to evaluate")
    return metrics_from_ranks(np.concatenate(ranks), np.concatenate(pts), data.move_numbers, ks)


def evaluate(net: Network, manifest: DatasetManifest, split: str = "test", limit: int = 0,
             ks: Optional[Sequence[int]] = None) -> tuple[Metrics, Curves]:
    data = EncodedExamples.from_split(manifest, split, net.encoding, limit)
    if len(data) == 0:
        raise ValueError(f"split {split!r} is empty")
    return evaluate_examples(net, data, ks=TOPK if ks is None else ks)
