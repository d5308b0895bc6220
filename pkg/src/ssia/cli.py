"""Command-line entry points: train, eval, gradcheck, cam, mpp.

Exit codes: 0 success, 1 user error (bad config, missing files, failed
gradcheck), 2 internal failure (training abort, unexpected exception).
Overrides: repeated ``--set key=value`` flags; the ``SSIA_SET`` environment
variable holds semicolon-separated pairs applied before the flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ssia import gradcheck as gradcheck_mod
from ssia import trainer, viz
from ssia.checkpoint import CheckpointError
from ssia.config import ConfigError, ExperimentConfig
from ssia.data import normalize_images
from ssia.tensor import Tensor
from ssia.trainer import TrainAbort

USER_ERROR = 1
INTERNAL_ERROR = 2


class UserError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    env = os.environ.get("SSIA_SET", "")
    if env:
        cfg.apply_overrides(p for p in env.split(";") if p.strip())
    cfg.apply_overrides(args.set or [])
    return cfg


class _RunLock:
    """Guards an output directory against concurrent runs."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, ".lock")

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UserError(f"output directory is locked by another run: {self.path}")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


def cmd_train(args) -> int:
    cfg = _load_config(args)
    with _RunLock(cfg["out.dir"]):
        report = trainer.train(cfg, resume=args.resume)
    print(f"run complete: {report['out_dir']} "
          f"(test top1 {report.get('test_top1', float('nan')):.2f}%)")
    return 0


def cmd_eval(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise UserError(f"checkpoint not found: {args.checkpoint}")
    model, cfg, kind, _ = trainer.load_model(args.checkpoint)
    if args.set:
        cfg.apply_overrides(args.set)
    data_dir = args.data or cfg["data.dir"]
    from ssia.data import load_cifar10
    _, test_set = load_cifar10(data_dir)
    test_set = test_set.subset(cfg["data.test_subset"])
    top1, top5, loss = trainer.evaluate(model.backbone, test_set, cfg["train.batch_size"],
                                        cfg["data.mean"], cfg["data.std"])
    print(f"top1 {top1:.4f}% top5 {top5:.4f}% task_loss {loss:.6f}")
    record = {"checkpoint": args.checkpoint, "kind": kind, "top1": top1, "top5": top5,
              "task_loss": loss, "config_digest": cfg.digest(), "samples": len(test_set)}
    with open(args.out, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    lines, ok = gradcheck_mod.report()
    print("\n".join(lines))
    return 0 if ok else USER_ERROR


def _load_image(path: str, cfg: ExperimentConfig) -> np.ndarray:
    if not os.path.exists(path):
        raise UserError(f"image not found: {path}")
    img = viz.read_ppm(path)
    u8 = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
    return normalize_images(u8[None], cfg["data.mean"], cfg["data.std"])[0]


def cmd_cam(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise UserError(f"checkpoint not found: {args.checkpoint}")
    model, cfg, _, _ = trainer.load_model(args.checkpoint)
    backbone = model.backbone
    os.makedirs(args.out, exist_ok=True)
    for path in args.images:
        image = _load_image(path, cfg)
        if args.class_index is not None:
            target = args.class_index
        else:
            from ssia.tensor import no_grad
            with no_grad():
                logits = backbone.forward(Tensor(image[None].astype(np.float32)), False)
            target = int(np.argmax(logits.data[0]))
        heatmap = viz.cam(backbone, image, target)
        stem = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(args.out, f"{stem}_{heatmap.source}.ppm")
        viz.write_image(heatmap, out_path)
        print(f"{out_path} (class {target})")
    return 0


def cmd_mpp(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise UserError(f"checkpoint not found: {args.checkpoint}")
    model, cfg, kind, _ = trainer.load_model(args.checkpoint)
    if not model.blocks:
        raise UserError(f"{args.checkpoint}: {kind} checkpoint carries no blocks; "
                        "macro-perception maps need a training checkpoint of an "
                        "auxiliary-enabled run")
    os.makedirs(args.out, exist_ok=True)
    from ssia.tensor import no_grad
    for path in args.images:
        image = _load_image(path, cfg)
        with no_grad():
            taps = model.backbone.forward_features(Tensor(image[None].astype(np.float32)), False)
        stem = os.path.splitext(os.path.basename(path))[0]
        for block in model.blocks:
            tap = taps[block.pair[0] - 1]
            heatmap = viz.mpp_heatmap(block, tap, out_size=image.shape[1])
            out_path = os.path.join(args.out, f"{stem}_{heatmap.source}.ppm")
            viz.write_image(heatmap, out_path)
            print(out_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssia", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--config", help="config file (defaults apply when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--resume", help="training checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (defaults to the embedded config)")
    p.add_argument("--out", default="eval.jsonl", help="JSON-lines results file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("cam", help="class activation maps for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class-index", type=int, dest="class_index")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("mpp", help="spatial macro-perception maps for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_mpp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UserError, ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    except TrainAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return INTERNAL_ERROR
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
