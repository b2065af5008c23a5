"""SGF parsing, game replay and sharded position/move datasets.

Shard layout (little-endian)::

    header  magic b"TGSH" | u16 version | u16 record size | u32 record count | u32 crc32(payload)
    record  91 B packed 2-bit occupancy | u8 to_move | u16 ko (0xFFFF none)
            | u16 target | u16 move number

Points inside records are flat row-major indices on a 19x19 board.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .goboard import Board, BoardError, Color, IllegalMoveError, Point, new_board

log = logging.getLogger(__name__)

BOARD_SIZE = 19
FORMAT_VERSION = 1
SHARD_MAGIC = b"TGSH"
HEADER = struct.Struct("<4sHHII")
OCC_BYTES = (BOARD_SIZE * BOARD_SIZE + 3) // 4  # 91
RECORD_DTYPE = np.dtype([
    ("occupancy", "u1", (OCC_BYTES,)),
    ("to_move", "u1"),
    ("ko", "<u2"),
    ("target", "<u2"),
    ("move_number", "<u2"),
])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 98
NO_KO = 0xFFFF
SPLITS = ("train", "val", "test")


class SgfParseError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at byte offset {offset}")
        self.offset = offset


class UnsupportedSizeError(ValueError):
    pass


class ReplayError(ValueError):
    def __init__(self, game_id: str, move_index: int, reason: str):
        super().__init__(f"{game_id}: move {move_index}: {reason}")
        self.game_id = game_id
        self.move_index = move_index
        self.reason = reason


class EmptyCorpusError(ValueError):
    pass


class CorruptShardError(ValueError):
    pass


# ---------------------------------------------------------------------------
# SGF

@dataclass
class GameRecord:
    board_size: int = BOARD_SIZE
    setup_black: list[Point] = field(default_factory=list)
    setup_white: list[Point] = field(default_factory=list)
    moves: list[tuple[Color, Optional[Point]]] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)


class _TreeParser:
    """Recursive descent over ``GameTree = "(" Node+ GameTree* ")"``, keeping the main line."""

    def __init__(self, text: str):
        self.text = text
        self.n = len(text)
        self.nodes: list[list[tuple[str, list[str], int]]] = []

    def ws(self, i: int) -> int:
        while i < self.n and self.text[i].isspace():
            i += 1
        return i

    def tree(self, i: int, keep: bool) -> int:
        text = self.text
        i = self.ws(i)
        if i >= self.n or text[i] != "(":
            raise SgfParseError("expected '('", i)
        i = self.ws(i + 1)
        if i >= self.n or text[i] != ";":
            raise SgfParseError("game tree must start with a node", i)
        while i < self.n and text[i] == ";":
            i, props = self.node(i + 1)
            if keep:
                self.nodes.append(props)
            i = self.ws(i)
        first = True
        while i < self.n and text[i] == "(":
            i = self.ws(self.tree(i, keep and first))
            first = False
        if i >= self.n:
            raise SgfParseError("unexpected end of input", i)
        if text[i] != ")":
            raise SgfParseError(f"unexpected character {text[i]!r}", i)
        return i + 1

    def node(self, i: int):
        text, n = self.text, self.n
        props = []
        while True:
            i = self.ws(i)
            start = i
            while i < n and text[i].isalpha():
                i += 1
            if start == i:
                return i, props
            # FF[3] allows lower-case letters in identifiers; they carry no meaning
            ident = "".join(c for c in text[start:i] if c.isupper())
            if not ident:
                raise SgfParseError("property identifier without upper-case letters", start)
            i = self.ws(i)
            if i >= n or text[i] != "[":
                raise SgfParseError(f"property {ident} has no value", i)
            values = []
            while i < n and text[i] == "[":
                i, v = self.value(i + 1)
                values.append(v)
                i = self.ws(i)
            props.append((ident, values, start))

    def value(self, i: int) -> tuple[int, str]:
        text, n = self.text, self.n
        buf = []
        while True:
            if i >= n:
                raise SgfParseError("unterminated property value", i)
            c = text[i]
            if c == "\\":
                if i + 1 >= n:
                    raise SgfParseError("dangling escape", i)
                if text[i + 1] not in "\r\n":  # escaped newline is a soft break
                    buf.append(text[i + 1])
                i += 2
            elif c == "]":
                return i + 1, "".join(buf)
            else:
                buf.append(c)
                i += 1


def _parse_tree(text: str) -> list[list[tuple[str, list[str], int]]]:
    """Nodes of the first game tree's main line, each a list of (ident, values, offset)."""
    parser = _TreeParser(text)
    parser.tree(0, True)
    return parser.nodes


def _point(value: str, size: int, offset: int) -> Optional[Point]:
    if value == "" or (size <= 19 and value == "tt"):
        return None
    if len(value) != 2 or not value.isalpha():
        raise SgfParseError(f"bad point {value!r}", offset)
    col, row = (ord(ch) - ord("a") if ch.islower() else ord(ch) - ord("A") + 26 for ch in value)
    if not (0 <= row < size and 0 <= col < size):
        raise SgfParseError(f"point {value!r} outside a {size}x{size} board", offset)
    return Point(row, col)


def _point_list(values: list[str], size: int, offset: int) -> list[Point]:
    out = []
    for v in values:
        if ":" in v:
            a, b = v.split(":", 1)
            p, q = _point(a, size, offset), _point(b, size, offset)
            if p is None or q is None:
                raise SgfParseError(f"bad compressed point list {v!r}", offset)
            for r in range(min(p.row, q.row), max(p.row, q.row) + 1):
                for c in range(min(p.col, q.col), max(p.col, q.col) + 1):
                    out.append(Point(r, c))
        else:
            p = _point(v, size, offset)
            if p is not None:
                out.append(p)
    return out


def parse_sgf(text: Union[str, bytes], supported_sizes: Iterable[int] = (BOARD_SIZE,)) -> GameRecord:
    """Parse the main line of the first game tree; variations are ignored."""
    if isinstance(text, bytes):
        # latin-1 keeps offsets equal to byte offsets
        text = text.decode("latin-1")
    nodes = _parse_tree(text)
    if not nodes:
        raise SgfParseError("game tree has no nodes", 0)
    root = {ident: (values, off) for ident, values, off in nodes[0]}
    size = BOARD_SIZE
    if "SZ" in root:
        raw, off = root["SZ"]
        try:
            dims = [int(v) for v in raw[0].split(":")]
        except ValueError:
            raise SgfParseError(f"bad SZ value {raw[0]!r}", off) from None
        if len(dims) == 2 and dims[0] != dims[1]:
            raise UnsupportedSizeError(f"rectangular board {raw[0]} not supported")
        size = dims[0]
    if size not in tuple(supported_sizes) or size > 52:
        raise UnsupportedSizeError(f"board size {size} not supported")
    game = GameRecord(board_size=size)
    for ident, values, off in nodes[0]:
        if ident == "AB":
            game.setup_black.extend(_point_list(values, size, off))
        elif ident == "AW":
            game.setup_white.extend(_point_list(values, size, off))
        elif ident not in ("B", "W"):
            game.metadata[ident] = _text(values[0]) if len(values) == 1 else "\n".join(_text(v) for v in values)
    for k, node in enumerate(nodes):
        for ident, values, off in node:
            if ident in ("B", "W"):
                game.moves.append((Color.BLACK if ident == "B" else Color.WHITE, _point(values[0], size, off)))
            elif k > 0 and ident in ("AB", "AW", "AE"):
                raise SgfParseError(f"setup property {ident} after the root node is not supported", off)
    return game


def _text(v: str) -> str:
    raw = v.encode("latin-1", errors="replace")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return v


# ---------------------------------------------------------------------------
# replay

@dataclass(frozen=True)
class TrainingExample:
    board: Board
    target: Point
    move_number: int

    @property
    def target_index(self) -> int:
        return self.target.row * self.board.size + self.target.col


def replay(game: GameRecord, game_id: str = "<game>") -> list[TrainingExample]:
    """One example per non-pass move, holding the position just before it."""
    try:
        board = new_board(game.board_size).with_setup(game.setup_black, game.setup_white)
    except BoardError as e:
        raise ReplayError(game_id, 0, str(e)) from None
    examples = []
    for k, (color, p) in enumerate(game.moves, start=1):
        # a move out of turn (e.g. White first in handicap games) acts as a pass
        board = board.with_to_move(color)
        if p is None:
            board = board.pass_move()
            continue
        try:
            outcome = board.play(p)
        except IllegalMoveError as e:
            raise ReplayError(game_id, k, e.reason) from None
        examples.append(TrainingExample(board, Point(*p), k))
        board = outcome.new_board
    return examples


# ---------------------------------------------------------------------------
# records and shards

def encode_records(examples: Sequence[TrainingExample]) -> np.ndarray:
    recs = np.zeros(len(examples), dtype=RECORD_DTYPE)
    m = BOARD_SIZE * BOARD_SIZE
    for i, ex in enumerate(examples):
        b = ex.board
        if b.size != BOARD_SIZE:
            raise UnsupportedSizeError("only 19x19 positions can be stored")
        occ = np.frombuffer(b.grid, dtype=np.uint8)
        padded = np.zeros(OCC_BYTES * 4, dtype=np.uint8)
        padded[:m] = occ
        q = padded.reshape(-1, 4)
        recs[i]["occupancy"] = q[:, 0] | (q[:, 1] << 2) | (q[:, 2] << 4) | (q[:, 3] << 6)
        recs[i]["to_move"] = int(b.to_move)
        recs[i]["ko"] = NO_KO if b.ko_point is None else b.ko_point[0] * BOARD_SIZE + b.ko_point[1]
        recs[i]["target"] = ex.target_index
        recs[i]["move_number"] = min(ex.move_number, 0xFFFF)
    return recs


def decode_records(recs: np.ndarray, verify: bool = True) -> list[TrainingExample]:
    """Rebuild examples; with ``verify`` every target is re-checked for legality."""
    m = BOARD_SIZE * BOARD_SIZE
    occ = recs["occupancy"]
    planes = np.stack([(occ >> s) & 3 for s in (0, 2, 4, 6)], axis=-1).reshape(len(recs), -1)[:, :m]
    out = []
    for i, r in enumerate(recs):
        ko = int(r["ko"])
        board = Board(BOARD_SIZE, planes[i].astype(np.uint8).tobytes(), Color(int(r["to_move"])),
                      None if ko == NO_KO else Point(*divmod(ko, BOARD_SIZE)))
        t = int(r["target"])
        target = Point(*divmod(t, BOARD_SIZE))
        if verify and (t >= m or not board.is_legal(target)):
            raise CorruptShardError(f"record {i}: target {tuple(target)} is not legal on its board")
        out.append(TrainingExample(board, target, int(r["move_number"])))
    return out


def write_shard(path: Path, recs: np.ndarray) -> int:
    """Write records atomically; returns the payload crc32."""
    payload = recs.tobytes()
    crc = zlib.crc32(payload)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(HEADER.pack(SHARD_MAGIC, FORMAT_VERSION, RECORD_SIZE, len(recs), crc))
        f.write(payload)
    os.replace(tmp, path)
    return crc


class ShardReader:
    """Random access over one shard; the payload checksum is verified on open."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        with open(self.path, "rb") as f:
            head = f.read(HEADER.size)
        if len(head) != HEADER.size:
            raise CorruptShardError(f"{self.path}: truncated header")
        magic, version, rsize, count, crc = HEADER.unpack(head)
        if magic != SHARD_MAGIC or version != FORMAT_VERSION or rsize != RECORD_SIZE:
            raise CorruptShardError(f"{self.path}: not a version-{FORMAT_VERSION} shard")
        if self.path.stat().st_size != HEADER.size + count * RECORD_SIZE:
            raise CorruptShardError(f"{self.path}: size does not match record count {count}")
        self.count = count
        self.records = np.memmap(self.path, dtype=RECORD_DTYPE, mode="r", offset=HEADER.size, shape=(count,)) \
            if count else np.zeros(0, dtype=RECORD_DTYPE)
        if zlib.crc32(np.asarray(self.records).tobytes()) != crc:
            raise CorruptShardError(f"{self.path}: checksum mismatch")

    def __len__(self):
        return self.count


# ---------------------------------------------------------------------------
# manifest and dataset build

@dataclass
class DatasetManifest:
    root: Path
    splits: dict[str, dict]
    fractions: tuple[float, float, float]
    seed: int
    source_checksum: str
    format_version: int = FORMAT_VERSION
    notes: dict[str, str] = field(default_factory=dict)

    def count(self, split: str) -> int:
        return self.splits[split]["count"]

    def shard_paths(self, split: str) -> list[Path]:
        return [self.root / s["path"] for s in self.splits[split]["shards"]]

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "record_size": RECORD_SIZE,
            "board_size": BOARD_SIZE,
            "seed": self.seed,
            "fractions": list(self.fractions),
            "source_checksum": self.source_checksum,
            "splits": self.splits,
            "notes": self.notes,
        }

    def save(self, path: Optional[Path] = None) -> Path:
        path = Path(path) if path else self.root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        if d.get("format_version") != FORMAT_VERSION:
            raise CorruptShardError(f"{path}: unsupported manifest version {d.get('format_version')}")
        return cls(path.parent, d["splits"], tuple(d["fractions"]), d["seed"], d["source_checksum"],
                   d["format_version"], d.get("notes", {}))


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _process_file(args) -> tuple[str, Optional[bytes], Optional[str]]:
    rel, path = args
    try:
        game = parse_sgf(Path(path).read_bytes())
        recs = encode_records(replay(game, rel))
        return rel, recs.tobytes(), None
    except (SgfParseError, UnsupportedSizeError, ReplayError, BoardError, OSError) as e:
        return rel, None, f"{type(e).__name__}: {e}"


def build_dataset(sgf_dir, out, fractions=(0.88, 0.04, 0.08), seed: int = 0,
                  shard_size: int = 100_000, jobs: int = 1) -> DatasetManifest:
    """Replay every ``.sgf`` below ``sgf_dir`` and write game-disjoint shards to ``out``."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-6:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    sgf_dir, out = Path(sgf_dir), Path(out)
    files = sorted((p.relative_to(sgf_dir).as_posix(), str(p))
                   for p in sgf_dir.rglob("*") if p.suffix.lower() == ".sgf" and p.is_file())
    if not files:
        raise EmptyCorpusError(f"no .sgf files under {sgf_dir}")
    out.mkdir(parents=True, exist_ok=True)

    digest = hashlib.sha256()
    for rel, path in files:
        digest.update(rel.encode() + b"\0" + Path(path).read_bytes() + b"\0")

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_process_file, files, chunksize=16))
    else:
        results = [_process_file(f) for f in files]
    good = [(rel, blob) for rel, blob, err in results if err is None]
    rejects = [(rel, err) for rel, _, err in results if err is not None]
    if not good:
        raise EmptyCorpusError(f"no usable games under {sgf_dir} ({len(rejects)} rejected)")
    for rel, err in rejects:
        log.warning("rejected %s: %s", rel, err)

    order = np.random.default_rng(seed).permutation(len(good))
    counts = _split_counts(len(good), fractions)
    splits = {}
    start = 0
    for name, n in zip(SPLITS, counts):
        chosen = [good[i] for i in order[start:start + n]]
        start += n
        recs = np.frombuffer(b"".join(blob for _, blob in chosen), dtype=RECORD_DTYPE)
        shards = []
        for s, lo in enumerate(range(0, max(len(recs), 1), shard_size)):
            part = recs[lo:lo + shard_size]
            fname = f"{name}-{s:05d}.shard"
            crc = write_shard(out / fname, part)
            shards.append({"path": fname, "count": int(len(part)), "crc32": crc})
        splits[name] = {"count": int(len(recs)), "shards": shards, "games": [rel for rel, _ in chosen]}

    with open(out / "rejects.txt", "w") as f:
        f.write(f"# {len(rejects)} of {len(files)} games rejected\n")
        for rel, err in rejects:
            f.write(f"{rel}\t{err}\n")
    manifest = DatasetManifest(out, splits, fractions, seed, digest.hexdigest(), notes={
        "setup_stones": "AB/AW setup stones are placed before move 1",
        "board_size": "games whose size is not 19x19 are rejected",
        "rejects": "rejects.txt",
    })
    manifest.save()
    return manifest


class SplitReader:
    """All shards of one split behind a single index space."""

    def __init__(self, manifest: DatasetManifest, split: str):
        if split not in manifest.splits:
            raise KeyError(f"no split {split!r} in manifest")
        self.shards = [ShardReader(p) for p in manifest.shard_paths(split)]
        for s, meta in zip(self.shards, manifest.splits[split]["shards"]):
            if s.count != meta["count"]:
                raise CorruptShardError(f"{s.path}: manifest says {meta['count']} records, shard has {s.count}")
        self.offsets = np.cumsum([0] + [s.count for s in self.shards])

    def __len__(self) -> int:
        return int(self.offsets[-1])

    def records(self, indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError(f"index out of range for split of size {len(self)}")
        out = np.empty(idx.size, dtype=RECORD_DTYPE)
        shard_of = np.searchsorted(self.offsets, idx, side="right") - 1
        for s in np.unique(shard_of):
            sel = shard_of == s
            out[sel] = self.shards[s].records[idx[sel] - self.offsets[s]]
        return out

    def all_records(self) -> np.ndarray:
        if not self.shards:
            return np.zeros(0, dtype=RECORD_DTYPE)
        return np.concatenate([np.asarray(s.records) for s in self.shards])


def load_batch(manifest: DatasetManifest, split: str, indices: Sequence[int]) -> list[TrainingExample]:
    return decode_records(SplitReader(manifest, split).records(indices))
