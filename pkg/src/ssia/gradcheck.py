"""Finite-difference verification of every differentiable operator.

All fixtures run at 64-bit on small shapes; each check reports the max
relative error of analytic gradients against central differences with step
1e-5. The suite is sized to finish in well under a minute on a desktop CPU.
"""

from __future__ import annotations

import numpy as np

from ssia import layers
from ssia.block import MacroPerceptionPredictor, SSIABlockConfig, block_loss, normalize, ssia_loss
from ssia.layers import BatchNorm, Conv2d, Linear, MlpHead, bilinear_resize
from ssia.tensor import Tensor, finite_diff_check

THRESHOLD = 1e-4
STEP = 1e-5


def _t(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def run_gradcheck():
    """[(name, max relative error)] for every operator and the block loss."""
    rng = np.random.default_rng(20240901)
    results = []

    def check(name, f, x):
        results.append((name, finite_diff_check(f, x, step=STEP)))

    a = _t(rng, (2, 3))
    b = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(2, 3)), requires_grad=True, dtype=np.float64)
    check("add", lambda t: (t + b).square().sum(), a)
    check("sub", lambda t: (t - b).square().sum(), a)
    check("mul", lambda t: (t * b).sum(), a)
    check("scale-by-constant", lambda t: (t * 2.5).square().sum(), a)
    check("square", lambda t: t.square().sum(), a)
    check("div", lambda t: (t / Tensor(np.full((2, 3), 1.7))).square().sum(), a)
    check("sqrt", lambda t: t.sqrt().sum(), pos)
    check("sum-axis", lambda t: t.sum(axes=(1,)).square().sum(), a)
    check("mean-axis", lambda t: t.mean(axes=(0,), keepdims=True).square().sum(), a)
    check("reshape", lambda t: (t.reshape((3, 2)) * Tensor(b.data.reshape(3, 2))).sum(), a)
    check("relu", lambda t: (t + 0.3).relu().sum(), a)

    m1 = _t(rng, (4, 5))
    m2 = Tensor(rng.normal(size=(5, 3)), dtype=np.float64)
    check("matmul", lambda t: (t @ m2).square().sum(), m1)

    conv = Conv2d(3, 4, 3, stride=2, padding=1, rng=rng, dtype=np.float64)
    cx = _t(rng, (2, 3, 6, 6))
    check("conv2d/input", lambda t: conv.forward(t).square().sum(), cx)
    check("conv2d/weight", lambda _t_: conv.forward(cx).square().sum(), conv.weight)
    check("conv2d/bias", lambda _t_: conv.forward(cx).square().sum(), conv.bias)

    px = _t(rng, (2, 3, 4, 4))
    check("pool_over_space", lambda t: layers.pool_over_space(t).square().sum(), px)
    check("pool_over_channels", lambda t: layers.pool_over_channels(t).square().sum(), px)
    check("bilinear_resize", lambda t: bilinear_resize(t, 7, 3).square().sum(), px)

    bn = BatchNorm(3, dtype=np.float64)
    bn.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
    check("batchnorm/input", lambda t: bn.forward(t, True).square().sum(), px)
    check("batchnorm/gamma", lambda _t_: bn.forward(px, True).square().sum(), bn.gamma)

    lin = Linear(5, 3, rng=rng, dtype=np.float64)
    lx = _t(rng, (3, 5))
    check("linear/input", lambda t: lin.forward(t).square().sum(), lx)
    check("linear/weight", lambda _t_: lin.forward(lx).square().sum(), lin.weight)

    mlp = MlpHead(6, 4, 5, rng=rng, dtype=np.float64)
    mx = _t(rng, (4, 6))
    check("mlp_forward", lambda t: mlp.forward(t, True).square().sum(), mx)

    ce_logits = _t(rng, (3, 6))
    ce_labels = np.array([2, 0, 5])
    check("softmax_cross_entropy",
          lambda t: layers.softmax_cross_entropy(t, ce_labels), ce_logits)

    nx = _t(rng, (2, 7))
    nw = Tensor(rng.normal(size=(2, 7)), dtype=np.float64)
    check("normalize", lambda t: (normalize(t, (1,), 1e-5) * nw).sum(), nx)

    cfg = SSIABlockConfig(hidden_width=8, target_spatial=(3, 3))
    g_fixed = Tensor(rng.normal(size=(2, 1, 3, 3)), dtype=np.float64)
    fx = _t(rng, (2, 1, 3, 3))
    check("ssia_loss", lambda t: ssia_loss(t, g_fixed, cfg), fx)

    mpp = MacroPerceptionPredictor(4, 8, (3, 3), 8, rng=rng, dtype=np.float64)
    x_l = _t(rng, (2, 4, 6, 6))
    x_h = Tensor(rng.normal(size=(2, 8, 3, 3)), dtype=np.float64)
    check("block_loss/x_l", lambda t: block_loss(t, x_h, mpp, cfg, True), x_l)
    for pname, p, _ in mpp.params():
        check(f"block_loss/{pname}",
              lambda _t_: block_loss(x_l, x_h, mpp, cfg, True), p)

    return results


def report(results=None):
    """(lines, all_passed); one PASS/FAIL line per checked operator."""
    results = results if results is not None else run_gradcheck()
    lines = []
    ok = True
    for name, err in results:
        passed = err <= THRESHOLD
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name}: max rel err {err:.3e} "
                     f"(threshold {THRESHOLD:.0e})")
    return lines, ok
