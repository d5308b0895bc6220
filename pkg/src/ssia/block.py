"""SSIA block: supervisory signal generator, macro-perception predictor, loss.

A block reads two feature-map taps. The signal side (higher stage) is pooled
into spatial and channel descriptors, resized to the configured signal size,
standardized per sample and detached; gradients never flow into it. The
prediction side (lower stage) is pooled the same way and regressed onto those
signals through two weak single-hidden-layer MLPs. Only signal entries with
magnitude strictly inside (eta, upper_bound) contribute to the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ssia.layers import MlpHead, bilinear_resize, pool_over_channels, pool_over_space
from ssia.tensor import Tensor, no_grad


@dataclass
class SSIABlockConfig:
    """Per-block hyperparameters; target_spatial is the signal-side map size."""

    hidden_width: int = 64
    eta: float = 0.5
    upper_bound: float = 10.0
    eps_loss: float = 1e-8
    eps_norm: float = 1e-5
    lambda_s: float = 1.0
    lambda_c: float = 3.0
    target_spatial: tuple = (2, 2)
    normalize_descriptors: bool = True

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if not self.eta < self.upper_bound:
            raise ValueError(f"eta ({self.eta}) must be below upper_bound ({self.upper_bound})")
        if self.lambda_s < 0 or self.lambda_c < 0 or self.lambda_s + self.lambda_c <= 0:
            raise ValueError("an active block needs lambda_s + lambda_c > 0, both non-negative")


@dataclass
class SupervisorySignals:
    """Detached standardized descriptors of the signal-side feature map."""

    g_s: Tensor  # [b, 1, H', W']
    g_c: Tensor  # [b, C', 1, 1]


@dataclass
class MacroPredictions:
    """Differentiable predictor outputs, shaped exactly like the signals."""

    f_s: Tensor
    f_c: Tensor


class MacroPerceptionPredictor:
    """Weak predictor: one MLP over the flattened spatial descriptor, one over channels."""

    def __init__(self, in_channels: int, out_channels: int, target_spatial: tuple,
                 hidden_width: int, rng=None, dtype=np.float32):
        th, tw = target_spatial
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.target_spatial = (th, tw)
        self.mlp_s = MlpHead(th * tw, hidden_width, th * tw, rng=rng, dtype=dtype)
        self.mlp_c = MlpHead(in_channels, hidden_width, out_channels, rng=rng, dtype=dtype)

    def params(self, prefix: str = ""):
        yield from self.mlp_s.params(prefix + "mlp_s.")
        yield from self.mlp_c.params(prefix + "mlp_c.")

    def buffers(self, prefix: str = ""):
        yield from self.mlp_s.buffers(prefix + "mlp_s.")
        yield from self.mlp_c.buffers(prefix + "mlp_c.")


def normalize(x: Tensor, axes: tuple, eps_norm: float) -> Tensor:
    """Per-sample standardization over the given axes: (x - mean) / sqrt(var + eps)."""
    mean = x.mean(axes=axes, keepdims=True)
    centered = x - mean
    var = centered.square().mean(axes=axes, keepdims=True)
    return centered / (var + eps_norm).sqrt()


def generate_signals(x_h: Tensor, cfg: SSIABlockConfig) -> SupervisorySignals:
    """Pool, resize and standardize the signal-side map, detached from the tape."""
    th, tw = cfg.target_spatial
    with no_grad():
        spatial = bilinear_resize(pool_over_channels(x_h), th, tw)
        g_s = normalize(spatial, axes=(2, 3), eps_norm=cfg.eps_norm)
        g_c = normalize(pool_over_space(x_h), axes=(1,), eps_norm=cfg.eps_norm)
    return SupervisorySignals(g_s=g_s, g_c=g_c)


def predict(x_l: Tensor, mpp: MacroPerceptionPredictor, cfg: SSIABlockConfig,
            training: bool = True) -> MacroPredictions:
    """Pooled prediction-side descriptors through the weak MLPs."""
    b, c = x_l.shape[0], x_l.shape[1]
    if c != mpp.in_channels:
        raise ValueError(f"predictor built for {mpp.in_channels} channels, tap has {c}")
    th, tw = cfg.target_spatial
    phi_s = bilinear_resize(pool_over_channels(x_l), th, tw)
    phi_c = pool_over_space(x_l)
    if cfg.normalize_descriptors:
        phi_s = normalize(phi_s, axes=(2, 3), eps_norm=cfg.eps_norm)
        phi_c = normalize(phi_c, axes=(1,), eps_norm=cfg.eps_norm)
    f_s = mpp.mlp_s.forward(phi_s.reshape((b, th * tw)), training).reshape((b, 1, th, tw))
    f_c = mpp.mlp_c.forward(phi_c.reshape((b, c)), training).reshape((b, mpp.out_channels, 1, 1))
    return MacroPredictions(f_s=f_s, f_c=f_c)


def valid_mask(g: Tensor, cfg: SSIABlockConfig) -> np.ndarray:
    """1 where eta < |g| < upper_bound (strict), else 0. Not differentiated."""
    a = np.abs(g.data)
    return ((a > cfg.eta) & (a < cfg.upper_bound)).astype(g.data.dtype)


def ssia_loss(f: Tensor, g: Tensor, cfg: SSIABlockConfig) -> Tensor:
    """Masked mean-square regression of f onto g, averaged over the batch.

    Per sample: sum_k m(k) (f(k) - g(k))^2 / (eps_loss + sum_k m(k)), with k
    running over every non-batch element. An all-invalid mask yields 0.
    """
    if f.shape != g.shape:
        raise ValueError(f"prediction shape {f.shape} != signal shape {g.shape}")
    mask = valid_mask(g, cfg)
    per_axes = tuple(range(1, f.ndim))
    masked_sq = (f - g).square() * Tensor(mask)
    per_sample = masked_sq.sum(axes=per_axes)
    inv_count = (1.0 / (cfg.eps_loss + mask.sum(axis=per_axes))).astype(mask.dtype)
    return (per_sample * Tensor(inv_count)).mean()


def block_loss(x_l: Tensor, x_h: Tensor, mpp: MacroPerceptionPredictor,
               cfg: SSIABlockConfig, training: bool = True) -> Tensor:
    """lambda_s * spatial loss + lambda_c * channel loss for one block."""
    signals = generate_signals(x_h, cfg)
    preds = predict(x_l, mpp, cfg, training)
    total = None
    if cfg.lambda_s != 0.0:
        total = ssia_loss(preds.f_s, signals.g_s, cfg) * cfg.lambda_s
    if cfg.lambda_c != 0.0:
        term = ssia_loss(preds.f_c, signals.g_c, cfg) * cfg.lambda_c
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros((), dtype=x_l.dtype))


class SSIABlock:
    """One attached block: config, predictor, and its (prediction, signal) taps."""

    def __init__(self, cfg: SSIABlockConfig, mpp: MacroPerceptionPredictor,
                 pair: tuple):
        self.cfg = cfg
        self.mpp = mpp
        self.pair = pair  # 1-indexed (prediction stage, signal stage)

    def loss(self, x_l: Tensor, x_h: Tensor, training: bool = True) -> Tensor:
        return block_loss(x_l, x_h, self.mpp, self.cfg, training)

    def params(self, prefix: str = ""):
        yield from self.mpp.params(prefix)

    def buffers(self, prefix: str = ""):
        yield from self.mpp.buffers(prefix)
