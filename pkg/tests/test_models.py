"""Backbones, wiring schemes, attachment transparency, stripping."""

import numpy as np
import numpy.testing as npt
import pytest

from ssia.block import SSIABlockConfig
from ssia.models import (
    ARCHS,
    AttachedModel,
    Backbone,
    attach_blocks,
    build_backbone,
    derive_pairs,
    strip_blocks,
    tap_specs,
)
from ssia.tensor import Tensor, no_grad


def tiny(num_classes=10, seed=0):
    return build_backbone("resnet-tiny-8", num_classes, rng=np.random.default_rng(seed))


def rand_batch(b=2, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(b, 3, 32, 32)).astype(np.float32))


def reference_param_count(channels, blocks, num_classes):
    """Independent arithmetic over the architecture table (convs without bias,
    a batchnorm affine pair per conv, 1x1 projection on stage transitions,
    stride-2 3x3 stem, linear classifier)."""
    total = 3 * channels[0] * 9 + 2 * channels[0]  # stem conv + bn
    in_ch = channels[0]
    for si, (out_ch, n) in enumerate(zip(channels, blocks)):
        for bi in range(n):
            stride = (2 if si > 0 else 1) if bi == 0 else 1
            total += in_ch * out_ch * 9 + 2 * out_ch      # conv1 + bn1
            total += out_ch * out_ch * 9 + 2 * out_ch     # conv2 + bn2
            if stride != 1 or in_ch != out_ch:
                total += in_ch * out_ch + 2 * out_ch      # 1x1 projection + bn
            in_ch = out_ch
    total += channels[-1] * num_classes + num_classes     # classifier
    return total


class TestBackbone:
    def test_forward_shape_contract(self):
        model = tiny(num_classes=7)
        with no_grad():
            logits = model.forward(rand_batch(3), training=False)
        assert logits.shape == (3, 7)

    def test_stage_channels_non_decreasing(self):
        for arch, (channels, _) in ARCHS.items():
            assert list(channels) == sorted(channels), arch

    def test_stage_spatial_ladder(self):
        assert tiny().stage_spatial(32) == (16, 8, 4, 2)

    def test_param_count_matches_independent_arithmetic(self):
        for arch, (channels, blocks) in ARCHS.items():
            model = build_backbone(arch, 10, rng=np.random.default_rng(1))
            assert model.param_count() == reference_param_count(channels, blocks, 10), arch

    def test_resnet18_like_param_count_near_standard_reference(self):
        # canonical 18-layer basic-block residual net at 1000 classes
        standard = 11_689_512
        model = build_backbone("resnet-18-like", 1000, rng=np.random.default_rng(2))
        assert abs(model.param_count() - standard) / standard < 0.05

    def test_unknown_arch_rejected(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            build_backbone("resnet-50", 10)


class TestDerivePairs:
    def test_cascaded_four_stages(self):
        assert derive_pairs("cascaded", 4) == [(1, 2), (2, 3), (3, 4)]

    def test_final_four_stages(self):
        assert derive_pairs("final", 4) == [(1, 4), (2, 4), (3, 4)]

    def test_identity_four_stages(self):
        assert derive_pairs("identity", 4) == [(1, 1), (2, 2), (3, 3)]

    def test_too_few_stages_rejected(self):
        with pytest.raises(ValueError, match="stages"):
            derive_pairs("cascaded", 1)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError, match="scheme"):
            derive_pairs("diagonal", 4)


class TestTapSpecs:
    def test_signal_sizes_follow_the_ladder(self):
        model = tiny()
        for scheme in ("cascaded", "final", "identity"):
            specs = tap_specs(model, scheme, input_hw=32)
            assert [s.target_spatial for s in specs] == [(8, 8), (4, 4), (2, 2)], scheme

    def test_cascaded_targets_equal_signal_stage_size(self):
        model = tiny()
        spatial = model.stage_spatial(32)
        for spec in tap_specs(model, "cascaded", 32):
            assert spec.target_spatial == (spatial[spec.signal_stage - 1],) * 2


class TestAttachment:
    def test_no_blocks_means_no_losses(self):
        model = AttachedModel(tiny(), [])
        logits, losses = model.forward_with_taps(rand_batch(), training=False)
        assert losses == []
        assert logits.shape == (2, 10)

    def test_logits_bitwise_equal_with_and_without_blocks(self):
        backbone = tiny(seed=3)
        attached = attach_blocks(backbone, "cascaded", SSIABlockConfig(hidden_width=8),
                                 rng=np.random.default_rng(4))
        x = rand_batch(4, seed=5)
        with no_grad():
            plain = backbone.forward(x, training=False)
            wired, losses = attached.forward_with_taps(x, training=False)
        npt.assert_array_equal(plain.data, wired.data)
        assert len(losses) == 3

    def test_three_cascaded_blocks_produce_finite_nonnegative_losses(self):
        attached = attach_blocks(tiny(seed=6), "cascaded", SSIABlockConfig(hidden_width=8),
                                 rng=np.random.default_rng(7))
        _, losses = attached.forward_with_taps(rand_batch(2, seed=8), training=True)
        assert len(losses) == 3
        for loss in losses:
            v = loss.item()
            assert np.isfinite(v) and v >= 0.0

    def test_out_of_range_tap_rejected(self):
        backbone = tiny()
        attached = attach_blocks(backbone, "cascaded", SSIABlockConfig(hidden_width=8))
        blk = attached.blocks[0]
        blk.pair = (1, 9)
        with pytest.raises(ValueError, match="out of range"):
            AttachedModel(backbone, [blk])


class TestStrip:
    def test_stripped_param_count_equals_baseline(self):
        backbone = tiny(seed=9)
        baseline_count = backbone.param_count()
        attached = attach_blocks(backbone, "cascaded", SSIABlockConfig(hidden_width=8),
                                 rng=np.random.default_rng(10))
        attached_count = sum(p.data.size for _, p, _ in attached.params())
        assert attached_count > baseline_count  # blocks do carry parameters
        stripped = strip_blocks(attached)
        assert stripped.param_count() == baseline_count

    def test_stripped_outputs_bitwise_equal_over_100_inputs(self):
        attached = attach_blocks(tiny(seed=11), "cascaded", SSIABlockConfig(hidden_width=8),
                                 rng=np.random.default_rng(12))
        stripped = strip_blocks(attached)
        rng = np.random.default_rng(13)
        with no_grad():
            for _ in range(100):
                x = Tensor(rng.normal(size=(1, 3, 32, 32)).astype(np.float32))
                a, _ = attached.forward_with_taps(x, training=False, with_losses=False)
                b = stripped.forward(x, training=False)
                npt.assert_array_equal(a.data, b.data)
