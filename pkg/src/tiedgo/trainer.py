"""Minibatch SGD with a piecewise-constant learning-rate schedule and resumable checkpoints.

Checkpoint file layout::

    b"TGCKPT\\0\\0" | u32 version | u64 header length | JSON header | parameter blobs

The JSON header describes the network, training progress and the offset,
shape and dtype of each little-endian parameter array that follows it.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .encoder import EncodingConfig, encode
from .sgfio import DatasetManifest, SplitReader, TrainingExample, decode_records
from .symnet import ConfigError, Network
from .symnet.network import masked_log_softmax

log = logging.getLogger(__name__)

CKPT_MAGIC = b"TGCKPT\0\0"
CKPT_VERSION = 1
CKPT_HEAD = struct.Struct("<8sIQ")
DIVERGENCE_LOSS = 10 * math.log(361)


class DivergenceError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


DEFAULT_ARCH = [
    {"type": "conv", "filters": 16, "kernel": 7},
    {"type": "conv", "filters": 16, "kernel": 5},
    {"type": "conv", "filters": 16, "kernel": 5},
    {"type": "dense"},
]


@dataclass
class TrainConfig:
    """Training run description; JSON-serialisable field for field.

    ``schedule`` is a list of ``[epochs, learning_rate]`` pairs run in order.
    """

    arch: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_ARCH))
    encoding: dict = field(default_factory=lambda: EncodingConfig().to_dict())
    tied: bool = True
    masked_training: bool = True
    activation: str = "relu"
    batch_size: int = 128
    schedule: list = field(default_factory=lambda: [[7, 0.05], [2, 0.01], [1, 0.005]])
    seed: int = 0
    init_std: float = 0.01
    data: str = ""
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = 0   # batches between mid-epoch checkpoints; 0 = epoch ends only
    val_split: str = "val"
    max_val_examples: int = 0   # 0 = whole split

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.schedule:
            raise ConfigError("schedule must not be empty")
        for item in self.schedule:
            if len(item) != 2 or int(item[0]) < 0 or float(item[1]) <= 0:
                raise ConfigError(f"bad schedule entry {item!r}: need [epochs >= 0, rate > 0]")

    @property
    def encoding_config(self) -> EncodingConfig:
        return EncodingConfig.from_dict(self.encoding)

    @property
    def total_epochs(self) -> int:
        return sum(int(e) for e, _ in self.schedule)

    def lr_for_epoch(self, epoch: int) -> float:
        seen = 0
        for n, lr in self.schedule:
            seen += int(n)
            if epoch < seen:
                return float(lr)
        raise IndexError(f"epoch {epoch} beyond schedule")

    def to_dict(self) -> dict:
        return asdict(self)

    def run_identity(self) -> dict:
        """The fields that determine the trained weights (output location excluded)."""
        d = self.to_dict()
        del d["checkpoint_dir"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Sequence[str] = ()) -> "TrainConfig":
        d = json.loads(Path(path).read_text())
        base = Path(path).parent
        for item in overrides:
            apply_override(d, item)
        cfg = cls.from_dict(d)
        # relative paths in a config file are relative to the file
        for key in ("data", "checkpoint_dir"):
            val = getattr(cfg, key)
            if val and not Path(val).is_absolute():
                setattr(cfg, key, str(base / val))
        return cfg


def apply_override(d: dict, item: str) -> None:
    """Apply ``dotted.key=value``; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


# ---------------------------------------------------------------------------
# network construction and the optimiser step

def build_network(config: TrainConfig, dtype=np.float32) -> Network:
    return Network(config.arch, config.encoding_config, tied=config.tied,
                   activation=config.activation, dtype=dtype)


def init_network(config: TrainConfig, seed: Optional[int] = None, dtype=np.float32) -> Network:
    """Free parameters ~ N(0, init_std^2) from a seeded generator; biases zero."""
    net = build_network(config, dtype)
    net.init_params(np.random.default_rng(config.seed if seed is None else seed), config.init_std)
    return net


def sgd_step(net: Network, batch, lr: float) -> float:
    """One plain gradient step on ``batch = (features, masks, targets)``; returns the mean NLL."""
    x, mask, targets = batch
    if len(targets) == 0:
        raise ValueError("empty batch")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    loss = net.loss_and_grads(x, mask, targets)
    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise DivergenceError(f"batch loss {loss} (limit {DIVERGENCE_LOSS:.2f})")
    if lr:
        for layer in net.layers:
            layer.weight -= np.asarray(lr, layer.weight.dtype) * layer.grad_weight
            layer.bias -= np.asarray(lr, layer.bias.dtype) * layer.grad_bias
    return loss


# ---------------------------------------------------------------------------
# encoded datasets

class EncodedExamples:
    """Bit-packed features, legal masks and targets for a list of examples."""

    def __init__(self, examples: Sequence[TrainingExample], encoding: EncodingConfig):
        self.encoding = encoding
        n = len(examples)
        self.size = examples[0].board.size if n else 19
        self.plane_len = encoding.channels * self.size * self.size
        feats = np.zeros((n, self.plane_len), dtype=np.uint8)
        masks = np.zeros((n, self.size * self.size), dtype=bool)
        for i, ex in enumerate(examples):
            feats[i] = encode(ex.board, encoding, np.uint8, check_size=False).ravel()
            masks[i] = ex.board.legal_mask()
        self.features = np.packbits(feats, axis=1)
        self.masks = np.packbits(masks, axis=1)
        self.targets = np.array([ex.target_index for ex in examples], dtype=np.int64)
        self.move_numbers = np.array([ex.move_number for ex in examples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.targets)

    def batch(self, idx, dtype=np.float32, masked: bool = True):
        n = self.size
        x = np.unpackbits(self.features[idx], axis=1, count=self.plane_len).astype(dtype)
        x = x.reshape(len(idx), self.encoding.channels, n, n)
        if masked:
            m = np.unpackbits(self.masks[idx], axis=1, count=n * n).astype(bool)
        else:
            m = np.ones((len(idx), n * n), dtype=bool)
        return x, m, self.targets[idx]

    @classmethod
    def from_split(cls, manifest: DatasetManifest, split: str, encoding: EncodingConfig,
                   limit: int = 0) -> "EncodedExamples":
        reader = SplitReader(manifest, split)
        n = len(reader) if not limit else min(limit, len(reader))
        return cls(decode_records(reader.records(np.arange(n))), encoding)


def mean_nll(net: Network, data: EncodedExamples, batch_size: int = 256) -> float:
    """Mean negative log likelihood under the masked softmax."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, len(data), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(data)))
        x, m, t = data.batch(idx, net.dtype)
        logp = masked_log_softmax(net.logits(x).astype(np.float64), m)
        total += float(-logp[np.arange(len(idx)), t].sum())
    return total / len(data)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: Union[str, Path], net: Network, state: Optional[dict] = None) -> Path:
    path = Path(path)
    params = net.named_params()
    entries, blobs, offset = [], [], 0
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"network": net.spec(), "params": entries, "state": state or {}},
                        sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> tuple[Network, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < CKPT_HEAD.size:
        raise CheckpointError(f"{path}: truncated")
    magic, version, hlen = CKPT_HEAD.unpack_from(raw)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CKPT_VERSION} checkpoint")
    header = json.loads(raw[CKPT_HEAD.size:CKPT_HEAD.size + hlen])
    body = raw[CKPT_HEAD.size + hlen:]
    net = Network.from_spec(header["network"])
    for e in header["params"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer(body, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        net.set_param(e["name"], arr.reshape(e["shape"]).astype(net.dtype))
    return net, header["state"]


# ---------------------------------------------------------------------------
# training loop

def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(config: TrainConfig, *, resume: bool = False, max_batches: Optional[int] = None,
          train_data: Optional[EncodedExamples] = None, val_data: Optional[EncodedExamples] = None) -> Path:
    """Run the whole schedule and return the final checkpoint path.

    Writes ``epoch-XXX.ckpt`` after every epoch, ``latest.ckpt`` whenever a
    checkpoint is taken and a plain-text ``train.log``.  ``max_batches`` stops
    early (after checkpointing) once that many batches have run in this call.
    """
    config.validate()
    ckdir = Path(config.checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)
    latest = ckdir / "latest.ckpt"
    enc = config.encoding_config
    if train_data is None or (val_data is None and config.val_split):
        manifest = DatasetManifest.load(config.data)
        if train_data is None:
            train_data = EncodedExamples.from_split(manifest, "train", enc)
        if val_data is None and config.val_split:
            val_data = EncodedExamples.from_split(manifest, config.val_split, enc, config.max_val_examples)
    if len(train_data) == 0:
        raise ValueError("training split is empty")

    if resume and latest.exists():
        net, state = load_checkpoint(latest)
        if state.get("config") != config.run_identity():
            raise CheckpointError("checkpoint was written with a different config")
        epoch, batch_idx = state["epoch"], state["batch"]
        history, losses = state["history"], state["epoch_losses"]
        log.info("resuming at epoch %d batch %d", epoch, batch_idx)
    else:
        net = init_network(config)
        epoch, batch_idx, history, losses = 0, 0, [], []

    n = len(train_data)
    bs = config.batch_size
    nbatches = (n + bs - 1) // bs
    ran = 0
    logf = open(ckdir / "train.log", "a")

    def checkpoint(name: Optional[str] = None):
        state = {"config": config.run_identity(), "epoch": epoch, "batch": batch_idx, "history": history,
                 "epoch_losses": losses, "rng": {"kind": "numpy.default_rng", "seed": [config.seed, epoch]}}
        save_checkpoint(latest, net, state)
        if name:
            save_checkpoint(ckdir / name, net, state)

    try:
        while epoch < config.total_epochs:
            lr = config.lr_for_epoch(epoch)
            order = _epoch_order(config.seed, epoch, n)
            t0 = time.time()
            while batch_idx < nbatches:
                idx = np.sort(order[batch_idx * bs:(batch_idx + 1) * bs])
                batch = train_data.batch(idx, net.dtype, masked=config.masked_training)
                losses.append(sgd_step(net, batch, lr))
                batch_idx += 1
                ran += 1
                if max_batches is not None and ran >= max_batches:
                    checkpoint()
                    return latest
                if config.checkpoint_every and batch_idx % config.checkpoint_every == 0 and batch_idx < nbatches:
                    checkpoint()
            val = mean_nll(net, val_data) if val_data is not None and len(val_data) else float("nan")
            train_nll = float(np.mean(losses)) if losses else float("nan")
            history.append({"epoch": epoch + 1, "lr": lr, "train_nll": train_nll, "val_nll": val})
            logf.write(f"epoch={epoch + 1} lr={lr:g} train_nll={train_nll:.5f} val_nll={val:.5f} "
                       f"wall={time.time() - t0:.1f}s\n")
            logf.flush()
            epoch += 1
            batch_idx = 0
            losses = []
            checkpoint(f"epoch-{epoch:03d}.ckpt")
    finally:
        logf.close()
    return latest
