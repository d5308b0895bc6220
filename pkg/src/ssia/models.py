"""Small residual backbones with stage taps, plus the block wiring schemes.

Both architectures are 4-stage residual nets over 32x32 inputs with a
stride-2 stem, so stage outputs have spatial sizes 16/8/4/2. Blocks predict
from stages 1-3; the signal tap depends on the scheme (cascaded: next stage,
final: last stage, identity: same stage). Spatial supervisory signals of
block n are always sized like stage n+1 (8/4/2 at 32x32 input), keeping the
three schemes comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ssia.block import MacroPerceptionPredictor, SSIABlock, SSIABlockConfig
from ssia.layers import BatchNorm, Conv2d, Linear, pool_over_space
from ssia.tensor import Tensor

SCHEMES = ("final", "cascaded", "identity")

ARCHS = {
    # name: (stage channels, blocks per stage)
    "resnet-tiny-8": ((8, 16, 32, 64), (1, 1, 1, 1)),
    "resnet-18-like": ((64, 128, 256, 512), (2, 2, 2, 2)),
}


class ResidualBlock:
    """Two 3x3 convs with identity (or 1x1 projection) shortcut."""

    def __init__(self, in_ch, out_ch, stride, rng, dtype):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.down_conv = Conv2d(in_ch, out_ch, 1, stride, 0, bias=False, rng=rng, dtype=dtype)
            self.down_bn = BatchNorm(out_ch, dtype=dtype)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out = self.bn1.forward(self.conv1.forward(x), training).relu()
        out = self.bn2.forward(self.conv2.forward(out), training)
        shortcut = x
        if self.down_conv is not None:
            shortcut = self.down_bn.forward(self.down_conv.forward(x), training)
        return (out + shortcut).relu()

    def params(self, prefix=""):
        yield from self.conv1.params(prefix + "conv1.")
        yield from self.bn1.params(prefix + "bn1.")
        yield from self.conv2.params(prefix + "conv2.")
        yield from self.bn2.params(prefix + "bn2.")
        if self.down_conv is not None:
            yield from self.down_conv.params(prefix + "down_conv.")
            yield from self.down_bn.params(prefix + "down_bn.")

    def buffers(self, prefix=""):
        yield from self.bn1.buffers(prefix + "bn1.")
        yield from self.bn2.buffers(prefix + "bn2.")
        if self.down_bn is not None:
            yield from self.down_bn.buffers(prefix + "down_bn.")


class Backbone:
    """Stem + 4 residual stages + global-average-pool + linear classifier."""

    def __init__(self, arch: str, num_classes: int, rng=None, dtype=np.float32):
        if arch not in ARCHS:
            raise ValueError(f"unknown architecture {arch!r}; supported: {sorted(ARCHS)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        channels, blocks = ARCHS[arch]
        self.arch = arch
        self.num_classes = num_classes
        self.stage_channels = channels
        self.stem_conv = Conv2d(3, channels[0], 3, 2, 1, bias=False, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm(channels[0], dtype=dtype)
        self.stages = []
        in_ch = channels[0]
        for si, (out_ch, n_blocks) in enumerate(zip(channels, blocks)):
            stride = 1 if si == 0 else 2
            stage = []
            for bi in range(n_blocks):
                stage.append(ResidualBlock(in_ch, out_ch, stride if bi == 0 else 1, rng, dtype))
                in_ch = out_ch
            self.stages.append(stage)
        self.head = Linear(channels[-1], num_classes, rng=rng, dtype=dtype)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def stage_spatial(self, input_hw: int = 32):
        """Spatial size of each stage output for a square input."""
        size = (input_hw + 1) // 2  # stride-2 stem
        sizes = []
        for si in range(self.n_stages):
            if si > 0:
                size = (size + 1) // 2
            sizes.append(size)
        return tuple(sizes)

    def forward_features(self, x: Tensor, training: bool):
        """Stage taps, in order; tap values are the raw stage outputs."""
        out = self.stem_bn.forward(self.stem_conv.forward(x), training).relu()
        taps = []
        for stage in self.stages:
            for block in stage:
                out = block.forward(out, training)
            taps.append(out)
        return taps

    def head_logits(self, tap: Tensor) -> Tensor:
        pooled = pool_over_space(tap)
        return self.head.forward(pooled.reshape((tap.shape[0], tap.shape[1])))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.head_logits(self.forward_features(x, training)[-1])

    def params(self, prefix=""):
        yield from self.stem_conv.params(prefix + "stem.conv.")
        yield from self.stem_bn.params(prefix + "stem.bn.")
        for si, stage in enumerate(self.stages, start=1):
            for bi, block in enumerate(stage, start=1):
                yield from block.params(f"{prefix}stage{si}.block{bi}.")
        yield from self.head.params(prefix + "head.")

    def buffers(self, prefix=""):
        yield from self.stem_bn.buffers(prefix + "stem.bn.")
        for si, stage in enumerate(self.stages, start=1):
            for bi, block in enumerate(stage, start=1):
                yield from block.buffers(f"{prefix}stage{si}.block{bi}.")

    def param_count(self) -> int:
        return sum(p.data.size for _, p, _ in self.params())


def build_backbone(arch: str, num_classes: int, rng=None, dtype=np.float32) -> Backbone:
    return Backbone(arch, num_classes, rng=rng, dtype=dtype)


@dataclass
class TapSpec:
    """Resolved wiring of one block: taps (1-indexed) and signal map size."""

    prediction_stage: int
    signal_stage: int
    target_spatial: tuple


def derive_pairs(scheme: str, n_stages: int):
    """(prediction stage, signal stage) pairs, blocks numbered bottom-up."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; supported: {SCHEMES}")
    if scheme in ("final", "cascaded") and n_stages < 2:
        raise ValueError(f"scheme {scheme!r} needs at least 2 stages, got {n_stages}")
    preds = range(1, n_stages)
    if scheme == "cascaded":
        return [(l, l + 1) for l in preds]
    if scheme == "final":
        return [(l, n_stages) for l in preds]
    return [(l, l) for l in preds]


def tap_specs(backbone: Backbone, scheme: str, input_hw: int = 32):
    """Signal maps of block n are sized like stage n+1 under every scheme."""
    spatial = backbone.stage_spatial(input_hw)
    specs = []
    for l, h in derive_pairs(scheme, backbone.n_stages):
        size = spatial[l]  # stage l+1, zero-indexed
        specs.append(TapSpec(l, h, (size, size)))
    return specs


class AttachedModel:
    """A backbone with SSIA blocks attached to its stage taps (training only)."""

    def __init__(self, backbone: Backbone, blocks):
        self.backbone = backbone
        self.blocks = list(blocks)
        for blk in self.blocks:
            l, h = blk.pair
            if not (1 <= l <= backbone.n_stages and 1 <= h <= backbone.n_stages):
                raise ValueError(f"tap pair {blk.pair} out of range for {backbone.n_stages} stages")

    def forward_with_taps(self, x: Tensor, training: bool, with_losses: bool = True):
        """One forward pass; logits are identical to a block-free forward."""
        taps = self.backbone.forward_features(x, training)
        logits = self.backbone.head_logits(taps[-1])
        losses = []
        if with_losses:
            for blk in self.blocks:
                l, h = blk.pair
                losses.append(blk.loss(taps[l - 1], taps[h - 1], training))
        return logits, losses

    def strip(self) -> Backbone:
        """Drop every block; the returned backbone is the inference model."""
        return self.backbone

    def params(self):
        yield from self.backbone.params()
        for n, blk in enumerate(self.blocks, start=1):
            yield from blk.params(f"block{n}.")

    def buffers(self):
        yield from self.backbone.buffers()
        for n, blk in enumerate(self.blocks, start=1):
            yield from blk.buffers(f"block{n}.")


def attach_blocks(backbone: Backbone, scheme: str, cfg: SSIABlockConfig,
                  rng=None, input_hw: int = 32, dtype=np.float32) -> AttachedModel:
    """Build one block per tap pair, sized from the backbone's stage shapes."""
    rng = rng if rng is not None else np.random.default_rng(0)
    blocks = []
    for spec in tap_specs(backbone, scheme, input_hw):
        block_cfg = SSIABlockConfig(
            hidden_width=cfg.hidden_width, eta=cfg.eta, upper_bound=cfg.upper_bound,
            eps_loss=cfg.eps_loss, eps_norm=cfg.eps_norm, lambda_s=cfg.lambda_s,
            lambda_c=cfg.lambda_c, target_spatial=spec.target_spatial,
            normalize_descriptors=cfg.normalize_descriptors)
        mpp = MacroPerceptionPredictor(
            in_channels=backbone.stage_channels[spec.prediction_stage - 1],
            out_channels=backbone.stage_channels[spec.signal_stage - 1],
            target_spatial=spec.target_spatial, hidden_width=cfg.hidden_width,
            rng=rng, dtype=dtype)
        blocks.append(SSIABlock(block_cfg, mpp, (spec.prediction_stage, spec.signal_stage)))
    return AttachedModel(backbone, blocks)


def strip_blocks(model) -> Backbone:
    """Inference model: the plain backbone, outputs bitwise-equal to attached."""
    if isinstance(model, AttachedModel):
        return model.strip()
    return model
