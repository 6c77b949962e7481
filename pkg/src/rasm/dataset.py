"""Manifest ingestion, auditing, splitting and batched image loading."""
from __future__ import annotations

import csv
import json
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from rasm import imaging
from rasm.errors import InvalidParameterError, ManifestParseError
from rasm.labelcodec import MAX_LABEL_LEN, Vocabulary, encode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Row:
    image_path: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Manifest:
    rows: tuple[Row, ...]
    root: Path | None = None

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def resolve(self, row: Row) -> Path:
        p = Path(row.image_path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def subset(self, rows) -> "Manifest":
        return Manifest(tuple(rows), self.root)


def load_manifest(path) -> Manifest:
    """Read a header-less CSV: image path, then one token per cell.

    An empty cell ends the row's token list, so trailing empty columns are
    dropped. ``.tif`` paths are rewritten to ``.jpg``. Relative image paths
    are resolved against the manifest's directory.
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, cells in enumerate(csv.reader(fh), 1):
            if not cells or not any(c.strip() for c in cells):
                continue
            image = cells[0].strip()
            if not image:
                raise ManifestParseError(lineno, "missing image path")
            if image.lower().endswith(".tif"):
                image = image[:-4] + ".jpg"
            tokens = []
            for cell in cells[1:]:
                cell = cell.strip()
                if not cell:
                    break
                tokens.append(cell)
            rows.append(Row(image, tuple(tokens)))
    return Manifest(tuple(rows), path.parent)


def write_manifest(manifest: Manifest | Sequence[Row], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in manifest:
            writer.writerow([row.image_path, *row.tokens])


@dataclass
class AuditReport:
    row_count: int = 0
    unannotated_count: int = 0
    unannotated_paths: list[str] = field(default_factory=list)
    length_min: int = 0
    length_mean: float = 0.0
    length_max: int = 0
    outlier_count: int = 0
    extension_rewrites: int = 0
    distinct_tokens: int = 0
    max_label_len: int = MAX_LABEL_LEN

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"rows                {self.row_count}",
            f"unannotated rows    {self.unannotated_count}",
            f"token length min    {self.length_min}",
            f"token length mean   {self.length_mean:.2f}",
            f"token length max    {self.length_max}",
            f"outliers (> {self.max_label_len})   {self.outlier_count}",
            f".tif rewrites       {self.extension_rewrites}",
            f"distinct tokens     {self.distinct_tokens}",
        ]
        lines += [f"  unannotated: {p}" for p in self.unannotated_paths]
        return "\n".join(lines) + "\n"

    def write(self, text_path, json_path) -> None:
        Path(text_path).write_text(self.to_text(), encoding="utf-8")
        Path(json_path).write_text(json.dumps(self.as_dict(), indent=2, ensure_ascii=False) + "\n",
                                   encoding="utf-8")


def count_extension_rewrites(path) -> int:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return sum(1 for cells in csv.reader(fh) if cells and cells[0].strip().lower().endswith(".tif"))


def audit(manifest: Manifest, max_len: int = MAX_LABEL_LEN, extension_rewrites: int = 0) -> AuditReport:
    """Summary statistics; the mean length counts unannotated rows as zero."""
    if len(manifest) == 0:
        return AuditReport(extension_rewrites=extension_rewrites, max_label_len=max_len)
    lengths = [len(r.tokens) for r in manifest]
    empty = [r.image_path for r in manifest if not r.tokens]
    return AuditReport(
        row_count=len(lengths),
        unannotated_count=len(empty),
        unannotated_paths=empty,
        length_min=min(lengths),
        length_mean=sum(lengths) / len(lengths),
        length_max=max(lengths),
        outlier_count=sum(n > max_len for n in lengths),
        extension_rewrites=extension_rewrites,
        distinct_tokens=len({t for r in manifest for t in r.tokens}),
        max_label_len=max_len,
    )


def clean(manifest: Manifest, max_len: int = MAX_LABEL_LEN) -> Manifest:
    """Drop unannotated rows and rows longer than ``max_len`` tokens."""
    return manifest.subset(r for r in manifest if 0 < len(r.tokens) <= max_len)


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    val = int(np.floor(n * ratios[1]))
    test = int(np.floor(n * ratios[2]))
    return n - val - test, val, test


def split(manifest: Manifest, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Seeded shuffle then contiguous train/validation/test partition.

    Validation and test sizes are floored; the remainder goes to training.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidParameterError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(manifest)
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n, ratios)
    rows = [manifest.rows[i] for i in order]
    return (manifest.subset(rows[:n_train]),
            manifest.subset(rows[n_train:n_train + n_val]),
            manifest.subset(rows[n_train + n_val:]))


@dataclass
class Batch:
    images: np.ndarray          # (B, H, W, 1) float32 in [0, 1]
    labels: np.ndarray          # (B, max_len) right-to-left padded ids
    label_lengths: np.ndarray   # (B,)
    paths: tuple[str, ...] = ()

    def __len__(self):
        return len(self.label_lengths)

    def targets(self) -> list[np.ndarray]:
        """Per-sample CTC targets in visual order."""
        m = self.labels.shape[1]
        return [self.labels[i, m - n:] for i, n in enumerate(self.label_lengths)]


class BatchStream:
    """Re-iterable stream of batches over a manifest.

    Every pass yields batches in manifest order. With ``cache`` enabled the
    decoded, resized image of each path is kept in memory after its first
    read. ``prefetch_depth > 0`` prepares up to that many batches on a
    worker thread; the consumer sees the same sequence either way.
    Unreadable images are logged, recorded in ``errors`` and skipped.
    """

    def __init__(self, manifest: Manifest, vocab: Vocabulary, batch_size: int = 16,
                 prefetch_depth: int = 0, cache: bool = True, height: int = 64, width: int = 800,
                 max_len: int = MAX_LABEL_LEN, reader: Callable | None = None):
        if batch_size < 1:
            raise InvalidParameterError("batch_size must be >= 1")
        self.manifest = manifest
        self.vocab = vocab
        self.batch_size = batch_size
        self.prefetch_depth = prefetch_depth
        self.cache_enabled = cache
        self.height, self.width, self.max_len = height, width, max_len
        self.reader = reader or imaging.read_image
        self.reads = 0
        self.errors: list[tuple[str, str]] = []
        self._cache: dict[str, np.ndarray] = {}

    def _load(self, row: Row) -> np.ndarray:
        key = str(self.manifest.resolve(row))
        if self.cache_enabled and key in self._cache:
            return self._cache[key]
        self.reads += 1
        img = imaging.resize_distortion_free(self.reader(key), self.height, self.width)
        img = img.astype(np.float32)
        if self.cache_enabled:
            self._cache[key] = img
        return img

    def _produce(self) -> Iterator[Batch]:
        rows = self.manifest.rows
        pending: list[tuple[Row, np.ndarray]] = []
        for row in rows:
            try:
                pending.append((row, self._load(row)))
            except Exception as exc:  # noqa: BLE001 - per-row failures must not end the stream
                log.warning("skipping %s: %s", row.image_path, exc)
                self.errors.append((row.image_path, str(exc)))
                continue
            if len(pending) == self.batch_size:
                yield self._assemble(pending)
                pending = []
        if pending:
            yield self._assemble(pending)

    def _assemble(self, items) -> Batch:
        labels = [encode(r.tokens, self.vocab, self.max_len) for r, _ in items]
        return Batch(
            images=np.stack([img for _, img in items])[..., None],
            labels=np.stack([l.ids for l in labels]),
            label_lengths=np.array([l.true_length for l in labels], dtype=np.int64),
            paths=tuple(r.image_path for r, _ in items),
        )

    def __iter__(self) -> Iterator[Batch]:
        if self.prefetch_depth <= 0:
            yield from self._produce()
            return
        q: queue.Queue = queue.Queue(maxsize=self.prefetch_depth)
        done = object()
        stop = threading.Event()

        def put(item) -> bool:
            while not stop.is_set():
                try:
                    q.put(item, timeout=0.1)
                    return True
                except queue.Full:
                    continue
            return False

        def worker():
            try:
                for b in self._produce():
                    if not put(b):
                        return
            except BaseException as exc:  # surfaced on the consumer side
                put(exc)
                return
            put(done)

        t = threading.Thread(target=worker, daemon=True)
        t.start()
        try:
            while True:
                item = q.get()
                if item is done:
                    break
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            t.join()


def batches(manifest: Manifest, vocab: Vocabulary, batch_size: int = 16, prefetch_depth: int = 0,
            **kwargs) -> BatchStream:
    return BatchStream(manifest, vocab, batch_size, prefetch_depth, **kwargs)
