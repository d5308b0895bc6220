"""Heatmap export: class activation maps and spatial macro-perception maps.

Maps are min-max normalized to [0, 1] (constant raw maps become all zeros)
and written as binary PPM (P6) through a fixed five-stop colormap running
dark blue -> cyan -> green -> orange -> dark red, so identical maps always
produce byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ssia.block import SSIABlock, predict
from ssia.layers import bilinear_resize_array
from ssia.models import Backbone
from ssia.tensor import Tensor, no_grad

COLORMAP_STOPS = np.array([
    [0.0, 0.0, 0.5],
    [0.0, 0.5, 1.0],
    [0.5, 1.0, 0.5],
    [1.0, 0.5, 0.0],
    [0.5, 0.0, 0.0],
])


@dataclass
class Heatmap:
    """Normalized [0, 1] map of size h x w plus its source tag."""

    values: np.ndarray
    source: str

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"heatmap values must be 2-D, got shape {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")


def minmax_normalize(raw: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant map becomes all zeros (guarded division)."""
    lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        return np.zeros_like(raw, dtype=np.float64)
    return (raw.astype(np.float64) - lo) / (hi - lo)


def cam(model: Backbone, image: np.ndarray, class_index: int) -> Heatmap:
    """Classifier-weighted sum of last-stage channels, ReLU, normalize, upsample.

    Requires the global-average-pool + linear head this backbone family has;
    image is one normalized [3, h, w] array in model space.
    """
    head = getattr(model, "head", None)
    if head is None or not hasattr(head, "weight"):
        raise ValueError("CAM needs a model with a linear head over pooled features")
    if not 0 <= class_index < model.num_classes:
        raise ValueError(f"class index {class_index} outside [0, {model.num_classes})")
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected one [3, h, w] image, got shape {image.shape}")
    with no_grad():
        taps = model.forward_features(Tensor(image[None].astype(np.float32)), training=False)
    feat = taps[-1].data[0]                      # [C, h', w']
    weights = head.weight.data[:, class_index]   # [C]
    raw = np.maximum(np.tensordot(weights, feat, axes=(0, 0)), 0.0)
    values = bilinear_resize_array(minmax_normalize(raw), image.shape[1], image.shape[2])
    return Heatmap(np.clip(values, 0.0, 1.0), "cam")


def mpp_heatmap(block: SSIABlock, x_l: Tensor, out_size: int = 32) -> Heatmap:
    """Spatial macro-perception prediction of one block, upsampled to input size."""
    with no_grad():
        preds = predict(x_l, block.mpp, block.cfg, training=False)
    th, tw = block.cfg.target_spatial
    raw = preds.f_s.data[0, 0].reshape(th, tw)
    values = bilinear_resize_array(minmax_normalize(raw), out_size, out_size)
    return Heatmap(np.clip(values, 0.0, 1.0), f"mpp-stage-{block.pair[0]}")


def colormap(values: np.ndarray) -> np.ndarray:
    """[h, w] in [0, 1] -> [h, w, 3] uint8 through the fixed stops."""
    v = np.clip(values, 0.0, 1.0)
    pos = v * (len(COLORMAP_STOPS) - 1)
    idx = np.minimum(pos.astype(np.int64), len(COLORMAP_STOPS) - 2)
    frac = (pos - idx)[..., None]
    rgb = COLORMAP_STOPS[idx] * (1.0 - frac) + COLORMAP_STOPS[idx + 1] * frac
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def write_image(heatmap: Heatmap, path: str) -> None:
    """Binary PPM (P6); byte-deterministic for identical inputs."""
    rgb = colormap(heatmap.values)
    h, w = heatmap.values.shape
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path: str) -> np.ndarray:
    """P6 file -> float [3, h, w] in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary P6 PPM file")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / maxval
