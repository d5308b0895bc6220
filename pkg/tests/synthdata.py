"""Synthetic CIFAR-10-format corpus for tests and desk-scale experiments.

Each image is low-frequency clutter carrying one 8x8 class-coding pattern at
a random position plus a lower-contrast distractor pattern from a different
class, with brightness jitter and pixel noise. The label is decodable only
from the dominant pattern, so finding and weighting the right region
(spatial attention) is the crux of the task. Files are written in the exact
binary layout the loader expects.
"""

import os

import numpy as np

from ssia.data import Dataset, write_cifar10

PATCH = 8


def _templates(rng: np.random.Generator) -> np.ndarray:
    """10 distinct high-contrast [3, PATCH, PATCH] patterns."""
    base = rng.normal(size=(10, 3, PATCH, PATCH))
    # smooth slightly so patterns survive downsampling into the network
    k = np.array([0.25, 0.5, 0.25])
    base = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 2, base)
    base = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 3, base)
    lo = base.min(axis=(1, 2, 3), keepdims=True)
    hi = base.max(axis=(1, 2, 3), keepdims=True)
    return (base - lo) / (hi - lo)  # in [0, 1]


def _clutter(rng: np.random.Generator, n: int) -> np.ndarray:
    """Low-frequency backgrounds [n, 3, 32, 32] in [0, 1]."""
    coarse = rng.random((n, 3, 8, 8))
    return np.clip(coarse.repeat(4, axis=2).repeat(4, axis=3)
                   + rng.normal(0, 0.08, size=(n, 3, 32, 32)), 0.0, 1.0)


def _paste(img, patch, y, x, alpha):
    img[:, y:y + PATCH, x:x + PATCH] *= (1.0 - alpha)
    img[:, y:y + PATCH, x:x + PATCH] += alpha * patch


def make_dataset(n: int, seed: int) -> Dataset:
    """Graded difficulty: pattern contrast varies per sample and a distractor
    appears on most images, so easy samples bootstrap training while hard
    ones keep localization quality mattering."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2024]))
    templates = _templates(np.random.default_rng(np.random.SeedSequence([7, 7])))
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    images = _clutter(rng, n) * 0.7
    pos = rng.integers(0, 32 - PATCH + 1, size=(n, 4))
    alpha_main = rng.uniform(0.55, 0.9, size=n)
    gain = rng.uniform(0.75, 1.0, size=n)
    has_distractor = rng.random(n) < 0.6
    offsets = rng.integers(1, 10, size=n)
    for i in range(n):
        if has_distractor[i]:
            dy, dx = pos[i, 2], pos[i, 3]
            distractor = templates[(labels[i] + offsets[i]) % 10]
            _paste(images[i], distractor, dy, dx, 0.35)
        y, x = pos[i, 0], pos[i, 1]
        _paste(images[i], templates[labels[i]] * gain[i], y, x, alpha_main[i])
    u8 = np.clip(images * 255.0 + rng.normal(0, 6.0, images.shape), 0, 255).astype(np.uint8)
    return Dataset(u8, labels)


def write_corpus(dir_path: str, seed: int = 0) -> str:
    """Full canonical-format directory (50000 train + 10000 test records)."""
    if not os.path.exists(os.path.join(dir_path, "test_batch.bin")):
        train = make_dataset(50000, seed)
        test = make_dataset(10000, seed + 1)
        write_cifar10(dir_path, train, test)
    return dir_path
