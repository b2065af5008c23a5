"""Command-line entry point: ``tiedgo {ingest,train,eval,predict,gtp,inspect}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
``TIEDGO_DATA_DIR`` supplies the default dataset directory for ``ingest
--out`` and ``eval --data``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

DEFAULT_SEED = 0
DATA_ENV = "TIEDGO_DATA_DIR"


def _fractions(s: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {s!r}") from None
    if len(parts) != 3 or min(parts) < 0 or abs(sum(parts) - 1) > 1e-6:
        raise argparse.ArgumentTypeError("split needs three non-negative fractions summing to 1")
    return parts


def _parser() -> argparse.ArgumentParser:
    default_data = os.environ.get(DATA_ENV)
    p = argparse.ArgumentParser(prog="tiedgo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="build sharded datasets from a directory of SGF files")
    s.add_argument("--sgf-dir", required=True, type=Path)
    s.add_argument("--out", type=Path, default=default_data, required=default_data is None)
    s.add_argument("--split", type=_fractions, default=(0.88, 0.04, 0.08))
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--shard-size", type=int, default=100_000)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--deterministic", action="store_true",
                   help="accepted for symmetry with train; ingest output never depends on --jobs")

    s = sub.add_parser("train", help="train a network from a JSON config")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.add_argument("--resume", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--deterministic", action="store_true")

    s = sub.add_parser("eval", help="accuracy, mean rank and mean probability on a split")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--data", type=Path, default=default_data, required=default_data is None)
    s.add_argument("--split", default="test")
    s.add_argument("--limit", type=int, default=0)
    s.add_argument("--curves", type=Path, default=None, metavar="DIR",
                   help="write move-number and top-k curve tables to DIR")

    s = sub.add_parser("predict", help="ranked predictions for one position of a game")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--sgf", required=True, type=Path)
    s.add_argument("--move-number", type=int, default=1,
                   help="predict move K of the game (position before it)")
    s.add_argument("--topk", type=int, default=10)

    s = sub.add_parser("gtp", help="speak GTP on stdin/stdout")
    s.add_argument("--model", required=True, type=Path)

    s = sub.add_parser("inspect", help="orbit counts, parameter statistics and filter pictures")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--layer", type=int, default=0)
    s.add_argument("--filters", type=int, default=4, help="filters to draw")
    return p


def cmd_ingest(args) -> int:
    from .sgfio import build_dataset

    m = build_dataset(args.sgf_dir, args.out, args.split, seed=args.seed,
                      shard_size=args.shard_size, jobs=args.jobs)
    for name, info in m.splits.items():
        print(f"{name}: games={len(info['games'])} positions={info['count']}")
    print(f"manifest={m.root / 'manifest.json'} source_checksum={m.source_checksum}")
    return 0


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    cfg = TrainConfig.from_file(args.config, args.override)
    if args.seed is not None:
        cfg.seed = args.seed
    path = train(cfg, resume=args.resume)
    print(f"checkpoint={path}")
    return 0


def cmd_eval(args) -> int:
    from .evaluator import evaluate
    from .sgfio import DatasetManifest
    from .trainer import load_checkpoint

    net, _ = load_checkpoint(args.model)
    metrics, curves = evaluate(net, DatasetManifest.load(args.data), args.split, args.limit)
    print(metrics.summary())
    print(f"top5={curves.topk_accuracy[5]:.4f} top10={curves.topk_accuracy[10]:.4f}")
    if args.curves:
        for path in curves.write(args.curves):
            print(f"wrote {path}")
    return 0


def cmd_predict(args) -> int:
    from .evaluator import predict_ranked
    from .gtp import point_to_vertex
    from .sgfio import parse_sgf, replay
    from .trainer import load_checkpoint

    net, _ = load_checkpoint(args.model)
    game = parse_sgf(args.sgf.read_bytes())
    examples = {ex.move_number: ex for ex in replay(game, str(args.sgf))}
    ex = examples.get(args.move_number)
    if ex is None:
        raise ValueError(f"move {args.move_number} is not a stone placement in {args.sgf}")
    print(ex.board)
    print(f"to move: {ex.board.to_move.name.lower()}  expert: {point_to_vertex(ex.target, ex.board.size)}")
    for rank, (p, prob) in enumerate(predict_ranked(net, ex.board)[:args.topk], start=1):
        mark = "  <- expert" if p == ex.target else ""
        print(f"{rank:3d} {point_to_vertex(p, ex.board.size):>4} {prob:.4f}{mark}")
    return 0


def cmd_gtp(args) -> int:
    from .gtp import run_gtp

    return run_gtp(args.model, sys.stdin, sys.stdout)


def _ascii(f: np.ndarray) -> list[str]:
    shades = " .:=+*#%@"
    scale = np.abs(f).max() or 1.0
    return ["".join(shades[int(round(abs(v) / scale * (len(shades) - 1)))] + ("-" if v < 0 else " ")
                    for v in row) for row in f]


def cmd_inspect(args) -> int:
    from .symnet import Conv2D
    from .trainer import load_checkpoint

    net, state = load_checkpoint(args.model)
    if not 0 <= args.layer < len(net.layers):
        raise ValueError(f"layer {args.layer} out of range (network has {len(net.layers)})")
    layer = net.layers[args.layer]
    kind = type(layer).__name__
    print(f"layer {args.layer}: {kind} tied={layer.tied}")
    if isinstance(layer, Conv2D):
        k = layer.kernel
        print(f"kernel={k}x{k} in={layer.in_channels} out={layer.out_channels}")
        print(f"free spatial parameters per channel pair: {layer.orbit_map.orbit_count} (raw {k * k})")
    else:
        m = layer.size * layer.size
        print(f"in={layer.in_channels}x{layer.size}x{layer.size} out={layer.size}x{layer.size}")
        print(f"free weights per input channel: {layer.orbit_map.orbit_count} (raw {m * m})")
        print(f"free biases: {layer.bias_map.orbit_count} (raw {m})")
    w, b = layer.weight, layer.bias
    print(f"weights: n={w.size} mean={w.mean():.6g} std={w.std():.6g} min={w.min():.6g} max={w.max():.6g}")
    print(f"biases:  n={b.size} mean={b.mean():.6g} std={b.std():.6g}")
    print(f"network free parameters: {net.num_params}")
    if isinstance(layer, Conv2D):
        filters = layer.filters()
        for o in range(min(args.filters, layer.out_channels)):
            print(f"filter {o}, input channel 0 (shade = |w|, '-' marks negative):")
            for line in _ascii(filters[o, 0]):
                print("  " + line)
    return 0


COMMANDS = {
    "ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval,
    "predict": cmd_predict, "gtp": cmd_gtp, "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # reported, not raised: the CLI contract is an exit status
        print(f"tiedgo {args.command}: error: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
