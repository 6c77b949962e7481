"""Optimization loop, training callbacks and checkpoint persistence."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from rasm.ctc import batch_ctc_loss, beam_decode, greedy_decode, log_softmax
from rasm.errors import CorruptCheckpointError, InfeasibleTargetError, ShapeError
from rasm.labelcodec import Vocabulary
from rasm.metrics import levenshtein
from rasm.nncore.network import Network, NetworkConfig

log = logging.getLogger(__name__)

IMPROVEMENT = 1e-6
CSV_COLUMNS = ("epoch", "train_loss", "val_loss", "val_edit_distance", "lr", "seconds")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-5
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.patience < 1 or self.lr_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_edit_distance: float
    lr: float
    seconds: float


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# ------------------------------------------------------------------ policies

def _val_losses(history) -> list[float]:
    return [h.val_loss if isinstance(h, EpochRecord) else float(h) for h in history]


def schedule_lr(history, base_lr: float = 1e-3, patience: int = 5, factor: float = 0.5,
                floor: float = 1e-5) -> float:
    """Learning rate for the next epoch: halve after ``patience`` epochs
    without a strict validation improvement, never below ``floor``."""
    lr, best, wait = base_lr, math.inf, 0
    for loss in _val_losses(history):
        if loss < best - IMPROVEMENT:
            best, wait = loss, 0
            continue
        wait += 1
        if wait >= patience:
            lr, wait = max(lr * factor, floor), 0
    return lr


def early_stop(history, patience: int = 10) -> bool:
    """True once ``patience`` epochs have passed since the best validation loss."""
    best, best_at = math.inf, -1
    losses = _val_losses(history)
    for i, loss in enumerate(losses):
        if loss < best - IMPROVEMENT:
            best, best_at = loss, i
    return best_at >= 0 and len(losses) - 1 - best_at >= patience


# ---------------------------------------------------------------- checkpoint

MAGIC = b"RASMCKPT"
VERSION = 1


def _encode_checkpoint(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, section: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(section, "file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, section: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), section))


def _decode_checkpoint(data: bytes):
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CorruptCheckpointError("magic", "not a checkpoint file")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CorruptCheckpointError("version", f"unsupported format version {version}")
    (meta_len,) = r.unpack("<I", "metadata")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError("metadata", str(exc)) from exc
    (count,) = r.unpack("<I", "tensors")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensors")
        name = r.take(name_len, "tensors").decode("utf-8", errors="replace")
        if name in tensors:
            raise CorruptCheckpointError("tensors", f"duplicate tensor {name}")
        (ndim,) = r.unpack("<B", "tensors")
        shape = r.unpack(f"<{ndim}I", "tensors")
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * size, "tensors"), dtype="<f4").reshape(shape).copy()
    if r.pos != len(data):
        raise CorruptCheckpointError("trailer", f"{len(data) - r.pos} unexpected trailing bytes")
    return tensors, meta


def save_checkpoint(net: Network, vocab: Vocabulary, path, meta: dict | None = None) -> None:
    """Write the network state, architecture and vocabulary atomically."""
    full_meta = {
        "architecture": net.config.as_dict(),
        "vocabulary": list(vocab.tokens),
        "display_map": dict(vocab.display_map),
        "blank_id": vocab.blank_id,
        "pad_id": vocab.pad_id,
    }
    full_meta.update(meta or {})
    data = _encode_checkpoint(net.state(), full_meta)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(network, vocabulary, metadata)``; the network is in infer mode."""
    tensors, meta = _decode_checkpoint(Path(path).read_bytes())
    try:
        config = NetworkConfig.from_dict(meta["architecture"])
        vocab = Vocabulary(tuple(meta["vocabulary"]), meta.get("display_map", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError("metadata", f"incomplete metadata: {exc}") from exc
    net = Network(config)
    try:
        net.load_state(tensors)
    except (KeyError, ShapeError) as exc:
        raise CorruptCheckpointError("tensors", str(exc)) from exc
    return net, vocab, meta


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ----------------------------------------------------------------- callbacks

@dataclass
class TrainState:
    net: Network
    config: TrainConfig
    vocab: Vocabulary | None
    history: list[EpochRecord] = field(default_factory=list)
    lr: float = 1e-3
    stop: bool = False


class Callback:
    def on_epoch_end(self, state: TrainState, record: EpochRecord) -> None:
        pass


class LearningRateScheduler(Callback):
    def on_epoch_end(self, state, record):
        cfg = state.config
        state.lr = schedule_lr(state.history, cfg.learning_rate, cfg.lr_patience, cfg.lr_factor, cfg.min_lr)


class ModelCheckpoint(Callback):
    """Saves only when the validation loss beats the best seen so far,
    including the best recorded in an existing file at ``path``."""

    def __init__(self, path, vocab: Vocabulary):
        self.path = Path(path)
        self.vocab = vocab
        self.best = math.inf
        if self.path.exists():
            try:
                _, meta = _decode_checkpoint(self.path.read_bytes())
                self.best = float(meta.get("best_val_loss", math.inf))
            except CorruptCheckpointError:
                log.warning("existing checkpoint %s is unreadable; it will be replaced", self.path)

    def on_epoch_end(self, state, record):
        if record.val_loss < self.best - IMPROVEMENT:
            self.best = record.val_loss
            save_checkpoint(state.net, self.vocab, self.path,
                            {"best_val_loss": record.val_loss, "epoch": record.epoch})


class CSVLogger(Callback):
    def __init__(self, path):
        self.path = Path(path)
        self._started = False

    def on_epoch_end(self, state, record):
        mode = "a" if self._started else "w"
        with self.path.open(mode, newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if not self._started:
                writer.writerow(CSV_COLUMNS)
                self._started = True
            writer.writerow([record.epoch] + [repr(float(getattr(record, c))) for c in CSV_COLUMNS[1:]])


class EarlyStopping(Callback):
    def on_epoch_end(self, state, record):
        if early_stop(state.history, state.config.patience):
            log.info("early stopping after epoch %d", record.epoch)
            state.stop = True


def default_callbacks(vocab: Vocabulary, checkpoint_path=None, log_path=None) -> list[Callback]:
    """Scheduler, checkpoint, CSV log and early stopping, in that order."""
    cbs: list[Callback] = [LearningRateScheduler()]
    if checkpoint_path is not None:
        cbs.append(ModelCheckpoint(checkpoint_path, vocab))
    if log_path is not None:
        cbs.append(CSVLogger(log_path))
    cbs.append(EarlyStopping())
    return cbs


# -------------------------------------------------------------------- loop

def _ctc_pass(net: Network, batch, where: str):
    logp = log_softmax(net.logits(batch.images).astype(np.float64))
    try:
        loss, _, grad = batch_ctc_loss(logp, batch.targets())
    except InfeasibleTargetError:
        for path, tgt in zip(batch.paths, batch.targets()):
            try:
                batch_ctc_loss(logp[:1], [tgt])
            except InfeasibleTargetError as exc:
                raise InfeasibleTargetError(f"{where} sample {path}: {exc}") from exc
        raise
    return loss, logp, grad


def decode_batch(net: Network, images) -> list[list[int]]:
    """Greedy transcripts (visual-order class ids) for a batch of images."""
    probs = net.forward(images)
    return [greedy_decode(p) for p in probs]


def recognize(net: Network, vocab: Vocabulary, images, beam_width: int = 0) -> list[list[str]]:
    """Token transcripts in reading order; ``beam_width`` 0 means greedy."""
    net.set_mode("infer")
    out = []
    for p in net.forward(images):
        ids = beam_decode(p, beam_width) if beam_width > 0 else greedy_decode(p)
        # the network emits visual (left-to-right) order; reading order is its reverse
        out.append([vocab.id_to_token(i) for i in reversed(ids)])
    return out


def validate(net: Network, stream: Iterable) -> tuple[float, float]:
    """Mean CTC loss and mean greedy edit distance over ``stream``."""
    net.set_mode("infer")
    total_loss = total_dist = 0.0
    n = 0
    for batch in stream:
        loss, logp, _ = _ctc_pass(net, batch, "validation")
        total_loss += loss * len(batch)
        for p, tgt in zip(np.exp(logp), batch.targets()):
            total_dist += levenshtein(greedy_decode(p), list(tgt))
        n += len(batch)
    if n == 0:
        raise ValueError("validation stream is empty")
    return total_loss / n, total_dist / n


def train(net: Network, train_stream: Iterable, val_stream: Iterable, config: TrainConfig,
          callbacks: Sequence[Callback] | None = None, vocab: Vocabulary | None = None,
          clock: Callable[[], float] = time.perf_counter) -> list[EpochRecord]:
    """Fit ``net`` with CTC and Adam; returns one record per completed epoch.

    Each epoch runs the training batches, a validation pass, and then every
    callback in order. Streams must be re-iterable (one pass per epoch).
    Training batches of a single sample are skipped because batch
    normalization cannot use them.
    """
    if callbacks is None:
        callbacks = [LearningRateScheduler(), EarlyStopping()]
    state = TrainState(net, config, vocab, lr=config.learning_rate)
    adam = AdamState()
    for epoch in range(1, config.epochs + 1):
        start = clock()
        net.set_mode("train")
        total, n = 0.0, 0
        for batch in train_stream:
            if len(batch) < 2:
                log.warning("skipping a training batch of size %d", len(batch))
                continue
            loss, _, grad = _ctc_pass(net, batch, "training")
            net.backward(grad.astype(net.dtype))
            grads = net.named_grads()
            if config.clip_norm:
                clip_by_global_norm(grads, config.clip_norm)
            adam_step(net.named_params(), grads, adam, state.lr, config.beta1, config.beta2, config.eps)
            total += loss * len(batch)
            n += len(batch)
        if n == 0:
            raise ValueError("training stream produced no usable batches")
        val_loss, val_dist = validate(net, val_stream)
        record = EpochRecord(epoch, total / n, val_loss, val_dist, state.lr, clock() - start)
        state.history.append(record)
        log.info("epoch %d train %.4f val %.4f edit %.3f lr %.2g", epoch, record.train_loss,
                 val_loss, val_dist, state.lr)
        for cb in callbacks:
            cb.on_epoch_end(state, record)
        if state.stop:
            break
    net.set_mode("infer")
    return state.history


def history_as_dicts(history: Sequence[EpochRecord]) -> list[dict]:
    return [asdict(r) for r in history]
