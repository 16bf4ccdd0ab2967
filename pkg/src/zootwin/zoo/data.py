"""IDX (MNIST-family) ingestion and the in-memory :class:`Dataset`."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """Malformed or inconsistent dataset files."""


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path) -> np.ndarray:
    """Return uint8 images shaped [N, 1, rows, cols]."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataError(f"{path}: truncated IDX image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise DataError(f"{path}: bad image magic 0x{magic:08x}")
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise DataError(f"{path}: truncated image data ({len(raw)} < {need} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, 1, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX label header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise DataError(f"{path}: bad label magic 0x{magic:08x}")
    if len(raw) < 8 + n:
        raise DataError(f"{path}: truncated label data")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 4:
        images = images[:, 0]
    n, rows, cols = images.shape
    blob = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    _write(path, blob)


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes())


def _write(path, blob: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)


@dataclass
class Dataset:
    """Standardized train/test split, images as f32 [N, C, H, W]."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    num_classes: int = 10
    name: str = "dataset"

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return tuple(self.train_x.shape[1:])

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.train_x, self.train_y
        if which == "test":
            return self.test_x, self.test_y
        raise ValueError(f"unknown split {which!r}")


def from_arrays(train_x, train_y, test_x, test_y, num_classes: int = 10, name: str = "dataset") -> Dataset:
    """Scale uint8 pixels to [0, 1] and standardize with train-split channel stats."""
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    for split, y in (("train", train_y), ("test", test_y)):
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise DataError(f"{split} labels outside [0, {num_classes})")
    tx = np.asarray(train_x, dtype=np.float32) / 255.0
    vx = np.asarray(test_x, dtype=np.float32) / 255.0
    mean = tx.mean(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std = tx.std(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std = np.maximum(std, 1e-6)
    shape = (1, -1, 1, 1)
    tx = (tx - mean.reshape(shape)) / std.reshape(shape)
    vx = (vx - mean.reshape(shape)) / std.reshape(shape)
    return Dataset(tx, train_y, vx, test_y, mean, std, num_classes, name)


def load_idx_dataset(images_path, labels_path, test_images_path, test_labels_path, num_classes: int = 10, name: str | None = None) -> Dataset:
    """Read train and test IDX pairs (optionally gzipped) into a :class:`Dataset`."""
    tr_x, tr_y = read_idx_images(images_path), read_idx_labels(labels_path)
    te_x, te_y = read_idx_images(test_images_path), read_idx_labels(test_labels_path)
    for kind, x, y in (("train", tr_x, tr_y), ("test", te_x, te_y)):
        if len(x) != len(y):
            raise DataError(f"{kind}: {len(x)} images but {len(y)} labels")
    return from_arrays(tr_x, tr_y, te_x, te_y, num_classes, name or Path(images_path).parent.name)
