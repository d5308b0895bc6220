"""Neural-network layers and pooling/resizing primitives.

Layers are plain parameter containers; ``forward`` is pure given
(parameters, input, training flag). Parameters are exposed as
``(name, tensor, decay)`` triples, where ``decay`` marks participation in
weight decay (conv/linear weights yes; biases and batch-norm affines no).
"""

from __future__ import annotations

import numpy as np

from ssia.tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan: int, dtype=np.float32) -> np.ndarray:
    """He-style normal init: std = sqrt(2 / fan). Drawn in float64, then cast."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan)).astype(dtype)


class Conv2d:
    """2-D cross-correlation with stride and zero padding."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.ksize, self.stride, self.padding = ksize, stride, padding
        fan_out = out_ch * ksize * ksize
        self.weight = Tensor(he_normal(rng, (out_ch, in_ch, ksize, ksize), fan_out, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None

    def params(self, prefix: str = ""):
        yield prefix + "weight", self.weight, True
        if self.bias is not None:
            yield prefix + "bias", self.bias, False

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"conv2d expects [b, {self.in_ch}, h, w] input, got {x.shape}")
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, oh, ow, c, k, k), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, :, i, j] = xp[:, :, i:i + stride * oh:stride,
                                        j:j + stride * ow:stride].transpose(0, 2, 3, 1)
    return cols.reshape(b * oh * ow, c * k * k)


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, padding: int,
            oh: int, ow: int) -> np.ndarray:
    b, c, h, w = x_shape
    dxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    dc = dcols.reshape(b, oh, ow, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                dc[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        return dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int, padding: int) -> Tensor:
    b, c, h, w = x.shape
    out_ch, _, k, _ = weight.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, oh, ow)
    w2 = weight.data.reshape(out_ch, -1)
    out2 = cols @ w2.T
    if bias is not None:
        out2 += bias.data
    out = out2.reshape(b, oh, ow, out_ch).transpose(0, 3, 1, 2)

    def grad_fn(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, out_ch)
        dw = (gt.T @ cols).reshape(weight.shape)
        dx = _col2im(gt @ w2, x.shape, k, stride, padding, oh, ow)
        if bias is None:
            return dx, dw
        return dx, dw, gt.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, grad_fn)


class BatchNorm:
    """Batch normalization over features (rank-4 conv maps or rank-2 vectors).

    Training mode normalizes with batch statistics and updates running stats;
    inference mode depends only on the running statistics.
    """

    def __init__(self, features: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.features = features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)

    def params(self, prefix: str = ""):
        yield prefix + "gamma", self.gamma, False
        yield prefix + "beta", self.beta, False

    def buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim == 4:
            axes, pshape = (0, 2, 3), (1, self.features, 1, 1)
        elif x.ndim == 2:
            axes, pshape = (0,), (1, self.features)
        else:
            raise ValueError(f"batchnorm expects rank-2 or rank-4 input, got {x.shape}")
        if x.shape[1] != self.features:
            raise ValueError(f"batchnorm over {self.features} features got {x.shape}")
        gamma = self.gamma.reshape(pshape)
        beta = self.beta.reshape(pshape)
        if training:
            mean = x.mean(axes=axes, keepdims=True)
            centered = x - mean
            var = centered.square().mean(axes=axes, keepdims=True)
            out = centered / (var + self.eps).sqrt() * gamma + beta
            n = x.data.size // self.features
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            m = self.momentum
            self.running_mean[:] = (1 - m) * self.running_mean + m * mean.data.reshape(-1)
            self.running_var[:] = (1 - m) * self.running_var + m * unbiased
            return out
        rm = Tensor(self.running_mean.reshape(pshape).astype(x.dtype))
        scale = Tensor((1.0 / np.sqrt(self.running_var + self.eps)).reshape(pshape).astype(x.dtype))
        return (x - rm) * scale * gamma + beta


class Linear:
    """Affine map [b, in] -> [b, out]; weight layout [in, out]."""

    def __init__(self, in_dim: int, out_dim: int, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Tensor(he_normal(rng, (in_dim, out_dim), in_dim, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def params(self, prefix: str = ""):
        yield prefix + "weight", self.weight, True
        yield prefix + "bias", self.bias, False

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"linear expects [b, {self.in_dim}] input, got {x.shape}")
        return x @ self.weight + self.bias.reshape((1, self.out_dim))


class MlpHead:
    """Single-hidden-layer MLP: linear -> batchnorm -> relu -> linear."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.linear1 = Linear(in_dim, hidden, rng, dtype)
        self.bn = BatchNorm(hidden, dtype=dtype)
        self.linear2 = Linear(hidden, out_dim, rng, dtype)

    def params(self, prefix: str = ""):
        yield from self.linear1.params(prefix + "linear1.")
        yield from self.bn.params(prefix + "bn.")
        yield from self.linear2.params(prefix + "linear2.")

    def buffers(self, prefix: str = ""):
        yield from self.bn.buffers(prefix + "bn.")

    def forward(self, v: Tensor, training: bool) -> Tensor:
        if v.ndim != 2 or v.shape[1] != self.in_dim:
            raise ValueError(f"mlp expects [b, {self.in_dim}] input, got {v.shape}")
        return self.linear2.forward(self.bn.forward(self.linear1.forward(v), training).relu())


def pool_over_space(x: Tensor) -> Tensor:
    """Mean over spatial positions per channel: [b,c,h,w] -> [b,c,1,1]."""
    if x.ndim != 4:
        raise ValueError(f"pool_over_space expects rank-4 input, got {x.shape}")
    return x.mean(axes=(2, 3), keepdims=True)


def pool_over_channels(x: Tensor) -> Tensor:
    """Mean over channels per spatial position: [b,c,h,w] -> [b,1,h,w]."""
    if x.ndim != 4:
        raise ValueError(f"pool_over_channels expects rank-4 input, got {x.shape}")
    return x.mean(axes=(1,), keepdims=True)


def _bilinear_coeffs(in_size: int, out_size: int):
    # align_corners=False sampling grid, edges clamped.
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear sampling of [..., h, w] arrays (align_corners=False)."""
    h, w = x.shape[-2:]
    y0, y1, fy = _bilinear_coeffs(h, out_h)
    x0, x1, fx = _bilinear_coeffs(w, out_w)
    fy = fy.astype(x.dtype)[..., :, None]
    fx = fx.astype(x.dtype)[..., None, :]
    top = x[..., y0, :][..., :, x0] * (1 - fx) + x[..., y0, :][..., :, x1] * fx
    bot = x[..., y1, :][..., :, x0] * (1 - fx) + x[..., y1, :][..., :, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bilinear resize of [b,c,h,w] maps (align_corners=False)."""
    if x.ndim != 4:
        raise ValueError(f"bilinear_resize expects rank-4 input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize target must be positive, got {(out_h, out_w)}")
    h, w = x.shape[2], x.shape[3]
    if (out_h, out_w) == (h, w):
        return x.reshape(x.shape)  # identity with a recorded backward
    out = bilinear_resize_array(x.data, out_h, out_w)
    y0, y1, fy = _bilinear_coeffs(h, out_h)
    x0, x1, fx = _bilinear_coeffs(w, out_w)

    def grad_fn(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        b, c = x.shape[:2]
        gf = g.reshape(b * c, out_h, out_w)
        dxf = dx.reshape(b * c, h, w)
        n_idx = np.arange(b * c)[:, None, None]
        wy = fy.astype(g.dtype)[:, None]
        wx = fx.astype(g.dtype)[None, :]
        for yi, ww_y in ((y0, 1 - wy), (y1, wy)):
            for xi, ww_x in ((x0, 1 - wx), (x1, wx)):
                np.add.at(dxf, (n_idx, yi[:, None], xi[None, :]), gf * (ww_y * ww_x))
        return (dx,)

    return Tensor._from_op(out, (x,), grad_fn)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logit[label])."""
    if logits.ndim != 2:
        raise ValueError(f"cross entropy expects [b, classes] logits, got {logits.shape}")
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    loss = -logp[np.arange(b), labels].mean()

    def grad_fn(g):
        soft = ez / sez
        soft[np.arange(b), labels] -= 1.0
        return (soft * (g / b),)

    return Tensor._from_op(np.asarray(loss, dtype=z.dtype), (logits,), grad_fn)
