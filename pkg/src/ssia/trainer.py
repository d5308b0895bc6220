"""Optimization loop: SGD with momentum, cosine schedule, metrics, checkpoints.

Every random stream (backbone init, block init, per-epoch shuffle and
augmentation) derives from the config seed through independent SeedSequence
children, so fixed-seed reruns are bitwise identical and a checkpoint's
(seed, epoch) pair fully determines the remaining randomness.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ssia.block import SSIABlockConfig
from ssia.checkpoint import load_entries, pack_text, save_entries, unpack_text
from ssia.config import ExperimentConfig
from ssia.data import BatchIterator, Dataset, load_cifar10
from ssia.layers import softmax_cross_entropy
from ssia.losses import LossWeights, total_loss, total_ssia_loss
from ssia.models import AttachedModel, Backbone, attach_blocks, build_backbone
from ssia.tensor import backward, grad_of, no_grad


class TrainAbort(RuntimeError):
    """Raised when the loss goes non-finite; names the first bad tensor."""

    def __init__(self, tensor_name: str, epoch: int, iteration: int):
        super().__init__(f"non-finite value in {tensor_name!r} "
                         f"at epoch {epoch}, iteration {iteration}")
        self.tensor_name = tensor_name


@dataclass
class TrainConfig:
    """Optimization hyperparameters, extracted from the flat config."""

    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 4e-5
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    weights: LossWeights = None
    scheme: str = "cascaded"
    ssia_enabled: bool = True
    skip_first: bool = False
    skip_iters: int = 200
    cosine_per_iteration: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.weights is None:
            self.weights = LossWeights()
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("lr0", "momentum", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def cosine_lr(t: float, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi t)) for epoch progress t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"schedule progress must lie in [0, 1], got {t}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t))


class SGD:
    """Momentum SGD; decay applies only to parameters flagged for it
    (conv/linear weights — never batchnorm affines or biases)."""

    def __init__(self, params, momentum: float, weight_decay: float):
        self.params = list(params)  # (name, tensor, decay)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t, _ in self.params}

    def step(self, lr: float) -> None:
        for name, t, decay in self.params:
            g = grad_of(t)
            if decay and self.weight_decay:
                g = g + self.weight_decay * t.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            t.data -= (lr * v).astype(t.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, t, _ in self.params:
            t.grad = None


def topk_counts(logits: np.ndarray, labels: np.ndarray, k: int = 5):
    """(top-1 hits, top-k hits); ties broken by stable class order."""
    order = np.argsort(-logits, axis=1, kind="stable")
    top1 = int((order[:, 0] == labels).sum())
    topk = int((order[:, :k] == labels[:, None]).any(axis=1).sum())
    return top1, topk


def evaluate(model: Backbone, ds: Dataset, batch_size: int, mean, std):
    """(top1 %, top5 %, mean task loss) over the set, inference mode."""
    hits1 = hits5 = 0
    loss_sum = 0.0
    with no_grad():
        for images, labels in BatchIterator(ds, batch_size, mean=mean, std=std):
            logits = model.forward(images, training=False)
            c1, c5 = topk_counts(logits.data, labels)
            hits1 += c1
            hits5 += c5
            loss_sum += softmax_cross_entropy(logits, labels).item() * len(labels)
    n = len(ds)
    return 100.0 * hits1 / n, 100.0 * hits5 / n, loss_sum / n


def _block_cfg(cfg: ExperimentConfig) -> SSIABlockConfig:
    return SSIABlockConfig(
        hidden_width=cfg["ssia.hidden_width"], eta=cfg["ssia.eta"],
        upper_bound=cfg["ssia.upper_bound"], eps_loss=cfg["ssia.eps_loss"],
        eps_norm=cfg["ssia.eps_norm"], lambda_s=cfg["ssia.lambda_s"],
        lambda_c=cfg["ssia.lambda_c"],
        normalize_descriptors=cfg["ssia.normalize_descriptors"])


def build_model(cfg: ExperimentConfig) -> AttachedModel:
    """Backbone plus blocks when the auxiliary objective is live."""
    seed = cfg["train.seed"]
    backbone = build_backbone(cfg["model.arch"], cfg["model.num_classes"],
                              rng=np.random.default_rng(np.random.SeedSequence([seed, 10])))
    active = cfg["ssia.enabled"] and cfg["loss.lambda_sb"] != 0.0
    if not active:
        return AttachedModel(backbone, [])
    return attach_blocks(backbone, cfg["ssia.scheme"], _block_cfg(cfg),
                         rng=np.random.default_rng(np.random.SeedSequence([seed, 11])))


def _loss_weights(cfg: ExperimentConfig) -> LossWeights:
    return LossWeights(lambda_task=cfg["loss.lambda_task"],
                       lambda_sb=cfg["loss.lambda_sb"],
                       per_block=list(cfg["loss.per_block"]))


def _fmt(v: float) -> str:
    return repr(float(v))


def _check_finite(probes, epoch: int, iteration: int) -> None:
    for name, t in probes:
        if not np.isfinite(t.data).all():
            raise TrainAbort(name, epoch, iteration)


def save_training_checkpoint(path: str, model: AttachedModel, opt: SGD,
                             epoch: int, cfg: ExperimentConfig) -> None:
    entries = {
        "meta/kind": pack_text("training"),
        "meta/config": pack_text(cfg.canonical()),
        "meta/epoch": np.array([epoch], dtype=np.uint64),
        "meta/seed": np.array([cfg["train.seed"]], dtype=np.uint64),
    }
    for name, t, _ in model.params():
        entries["param/" + name] = t.data
    for name, buf in model.buffers():
        entries["buffer/" + name] = buf
    for name in sorted(opt.velocity):
        entries["opt/" + name] = opt.velocity[name]
    save_entries(path, entries)


def save_stripped_checkpoint(path: str, backbone: Backbone, cfg: ExperimentConfig) -> None:
    entries = {
        "meta/kind": pack_text("stripped"),
        "meta/config": pack_text(cfg.canonical()),
    }
    for name, t, _ in backbone.params():
        entries["param/" + name] = t.data
    for name, buf in backbone.buffers():
        entries["buffer/" + name] = buf
    save_entries(path, entries)


def load_model(path: str):
    """(model, cfg, kind, entries) rebuilt from a checkpoint's embedded config."""
    entries = load_entries(path)
    cfg = ExperimentConfig.parse(unpack_text(entries["meta/config"]))
    kind = unpack_text(entries["meta/kind"])
    model = build_model(cfg) if kind == "training" else AttachedModel(
        build_backbone(cfg["model.arch"], cfg["model.num_classes"],
                       rng=np.random.default_rng(np.random.SeedSequence([cfg["train.seed"], 10]))), [])
    for name, t, _ in model.params():
        key = "param/" + name
        if key in entries:
            if entries[key].shape != t.data.shape:
                raise ValueError(f"{path}: {key} has shape {entries[key].shape}, "
                                 f"model expects {t.data.shape}")
            t.data = entries[key].astype(t.data.dtype, copy=True)
    buffers = dict(model.buffers())
    for name, buf in buffers.items():
        key = "buffer/" + name
        if key in entries:
            buf[:] = entries[key]
    return model, cfg, kind, entries


def train(cfg: ExperimentConfig, resume: str | None = None) -> dict:
    """Run the experiment described by cfg; returns a small report dict."""
    out_dir = cfg["out.dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfg.canonical())

    train_set, test_set = load_cifar10(cfg["data.dir"])
    train_set = train_set.subset(cfg["data.train_subset"])
    test_set = test_set.subset(cfg["data.test_subset"])
    mean, std = cfg["data.mean"], cfg["data.std"]

    tc = TrainConfig(
        lr0=cfg["train.lr0"], momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"], epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"], seed=cfg["train.seed"],
        weights=_loss_weights(cfg), scheme=cfg["ssia.scheme"],
        ssia_enabled=cfg["ssia.enabled"], skip_first=cfg["ssia.skip_first"],
        skip_iters=cfg["ssia.skip_iters"],
        cosine_per_iteration=cfg["train.cosine_per_iteration"],
        checkpoint_every=cfg["train.checkpoint_every"])

    model = build_model(cfg)
    n_blocks = len(model.blocks)
    opt = SGD(model.params(), tc.momentum, tc.weight_decay)

    start_epoch = 0
    if resume is not None:
        entries = load_entries(resume)
        if unpack_text(entries["meta/kind"]) != "training":
            raise ValueError(f"{resume}: cannot resume from a stripped checkpoint")
        for name, t, _ in model.params():
            t.data = entries["param/" + name].astype(t.data.dtype, copy=True)
        for name, buf in model.buffers():
            buf[:] = entries["buffer/" + name]
        for name in opt.velocity:
            opt.velocity[name] = entries["opt/" + name].copy()
        start_epoch = int(entries["meta/epoch"][0])

    header = ["epoch", "split", "top1", "top5", "task_loss", "ssia_total"]
    header += [f"ssia_block_{i}" for i in range(1, n_blocks + 1)]
    header.append("lr")
    metrics_path = os.path.join(out_dir, "metrics.csv")
    metrics = open(metrics_path, "w", encoding="utf-8")
    metrics.write(",".join(header) + "\n")

    steps_per_epoch = (len(train_set) + tc.batch_size - 1) // tc.batch_size
    total_steps = steps_per_epoch * tc.epochs
    global_step = start_epoch * steps_per_epoch
    report = {"out_dir": out_dir, "epochs": tc.epochs, "blocks": n_blocks}

    for epoch in range(start_epoch, tc.epochs):
        lr = cosine_lr(epoch / tc.epochs, tc.lr0)
        hits1 = hits5 = seen = 0
        task_sum = 0.0
        ssia_sum = 0.0
        block_sums = np.zeros(n_blocks)
        batches = BatchIterator(train_set, tc.batch_size, seed=tc.seed, epoch=epoch,
                                augment=cfg["data.augment"], shuffle=True,
                                mean=mean, std=std)
        for iteration, (images, labels) in enumerate(batches):
            if tc.cosine_per_iteration:
                lr = cosine_lr(global_step / total_steps, tc.lr0)
            logits, block_losses = model.forward_with_taps(images, training=True)
            task = softmax_cross_entropy(logits, labels)
            ssia_total = total_ssia_loss(block_losses, tc.weights)
            skipping = tc.skip_first and global_step < tc.skip_iters
            if skipping or n_blocks == 0:
                objective = task * tc.weights.lambda_task
            else:
                objective = total_loss(task, ssia_total, tc.weights)
            probes = [("logits", logits), ("task_loss", task)]
            probes += [(f"ssia_block_{i}", bl) for i, bl in enumerate(block_losses, start=1)]
            probes += [("ssia_total", ssia_total), ("total_loss", objective)]
            _check_finite(probes, epoch, iteration)
            backward(objective)
            opt.step(lr)
            opt.zero_grad()

            b = len(labels)
            c1, c5 = topk_counts(logits.data, labels)
            hits1 += c1
            hits5 += c5
            seen += b
            task_sum += task.item() * b
            ssia_sum += ssia_total.item() * b
            for i, bl in enumerate(block_losses):
                block_sums[i] += bl.item() * b
            global_step += 1

        row = [str(epoch), "train", _fmt(100.0 * hits1 / seen), _fmt(100.0 * hits5 / seen),
               _fmt(task_sum / seen), _fmt(ssia_sum / seen)]
        row += [_fmt(v / seen) for v in block_sums]
        row.append(_fmt(lr))
        metrics.write(",".join(row) + "\n")

        top1, top5, test_loss = evaluate(model.backbone, test_set, tc.batch_size, mean, std)
        row = [str(epoch), "test", _fmt(top1), _fmt(top5), _fmt(test_loss), _fmt(0.0)]
        row += [_fmt(0.0)] * n_blocks
        row.append(_fmt(lr))
        metrics.write(",".join(row) + "\n")
        metrics.flush()

        if tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0 and epoch + 1 < tc.epochs:
            save_training_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt"),
                                     model, opt, epoch + 1, cfg)
        report.update(test_top1=top1, test_top5=top5, test_task_loss=test_loss)

    metrics.close()
    final_path = os.path.join(out_dir, "final.ckpt")
    save_training_checkpoint(final_path, model, opt, tc.epochs, cfg)
    stripped_path = os.path.join(out_dir, "final_stripped.ckpt")
    save_stripped_checkpoint(stripped_path, model.strip(), cfg)
    report.update(metrics=metrics_path, final_checkpoint=final_path,
                  stripped_checkpoint=stripped_path)
    return report
