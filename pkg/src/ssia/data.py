"""CIFAR-10 binary-format ingestion, augmentation, and deterministic batching.

Record layout: 1 label byte then 3072 pixel bytes (1024 red, 1024 green,
1024 blue, row-major), 10000 records per file; five train files
``data_batch_1..5.bin`` plus ``test_batch.bin``. Parsing is bit-exact:
re-serializing parsed records reproduces the source bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ssia.tensor import Tensor

RECORD_BYTES = 3073
RECORDS_PER_FILE = 10000
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"

# widely used per-channel statistics of the CIFAR-10 training set
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2023, 0.1994, 0.2010)


@dataclass
class Dataset:
    """Raw byte images [n, 3, 32, 32] plus integer labels [n]."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        """Deterministic prefix subset; n <= 0 means the full set."""
        if n <= 0 or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n])


def parse_records(raw: bytes, path: str = "<bytes>") -> Dataset:
    if len(raw) % RECORD_BYTES != 0:
        expected = (len(raw) // RECORD_BYTES + 1) * RECORD_BYTES
        raise ValueError(
            f"{path}: size {len(raw)} bytes is not a whole number of {RECORD_BYTES}-byte "
            f"records (nearest whole-record size {expected})")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = arr[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{path}: record {bad} has label byte {labels[bad]} > 9")
    images = arr[:, 1:].reshape(-1, 3, 32, 32).copy()
    return Dataset(images, labels)


def serialize_records(ds: Dataset) -> bytes:
    """Inverse of parse_records, byte-for-byte."""
    n = len(ds)
    out = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = ds.labels
    out[:, 1:] = ds.images.reshape(n, 3072)
    return out.tobytes()


def _load_file(path: str, expect_records: int) -> Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file missing: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    expected = expect_records * RECORD_BYTES
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes ({expect_records} records), "
                         f"got {len(raw)}")
    return parse_records(raw, path)


def load_cifar10(dir_path: str):
    """(train, test) datasets from the canonical six binary files."""
    parts = [_load_file(os.path.join(dir_path, name), RECORDS_PER_FILE)
             for name in TRAIN_FILES]
    train = Dataset(np.concatenate([p.images for p in parts]),
                    np.concatenate([p.labels for p in parts]))
    test = _load_file(os.path.join(dir_path, TEST_FILE), RECORDS_PER_FILE)
    return train, test


def write_cifar10(dir_path: str, train: Dataset, test: Dataset) -> None:
    """Write datasets in the canonical layout (sizes must match the format)."""
    if len(train) != 5 * RECORDS_PER_FILE or len(test) != RECORDS_PER_FILE:
        raise ValueError(f"canonical layout needs 50000 train / 10000 test records, "
                         f"got {len(train)} / {len(test)}")
    os.makedirs(dir_path, exist_ok=True)
    for i, name in enumerate(TRAIN_FILES):
        chunk = Dataset(train.images[i * RECORDS_PER_FILE:(i + 1) * RECORDS_PER_FILE],
                        train.labels[i * RECORDS_PER_FILE:(i + 1) * RECORDS_PER_FILE])
        with open(os.path.join(dir_path, name), "wb") as fh:
            fh.write(serialize_records(chunk))
    with open(os.path.join(dir_path, TEST_FILE), "wb") as fh:
        fh.write(serialize_records(test))


def normalize_images(images_u8: np.ndarray, mean, std) -> np.ndarray:
    """Bytes -> float32 in model space: x/255 standardized per channel."""
    x = images_u8.astype(np.float32) / 255.0
    m = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
    s = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
    return (x - m) / s


def augment_batch(images_u8: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Reflect-pad 4, random 32x32 crop, horizontal flip with probability 0.5."""
    b = images_u8.shape[0]
    padded = np.pad(images_u8, ((0, 0), (0, 0), (4, 4), (4, 4)), mode="reflect")
    offsets = rng.integers(0, 9, size=(b, 2))
    flips = rng.random(b) < 0.5
    out = np.empty_like(images_u8)
    for i in range(b):
        oy, ox = offsets[i]
        crop = padded[i, :, oy:oy + 32, ox:ox + 32]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


class BatchIterator:
    """Deterministic epoch stream; identical (seed, epoch) gives identical order.

    Shuffling and augmentation draw from generators derived from
    (seed, epoch), never from global state; evaluation mode touches no RNG.
    """

    def __init__(self, ds: Dataset, batch_size: int, seed: int = 0, epoch: int = 0,
                 augment: bool = False, shuffle: bool = False,
                 mean=CIFAR10_MEAN, std=CIFAR10_STD):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.ds = ds
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = epoch
        self.augment = augment
        self.shuffle = shuffle
        self.mean, self.std = mean, std

    def __len__(self):
        return (len(self.ds) + self.batch_size - 1) // self.batch_size

    def __iter__(self):
        n = len(self.ds)
        if self.shuffle:
            order_rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.epoch, 0]))
            order = order_rng.permutation(n)
        else:
            order = np.arange(n)
        aug_rng = (np.random.default_rng(np.random.SeedSequence([self.seed, self.epoch, 1]))
                   if self.augment else None)
        for start in range(0, n, self.batch_size):
            idx = order[start:start + self.batch_size]
            images = self.ds.images[idx]
            if aug_rng is not None:
                images = augment_batch(images, aug_rng)
            yield Tensor(normalize_images(images, self.mean, self.std)), self.ds.labels[idx]
