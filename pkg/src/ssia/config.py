"""Flat key-value experiment configuration with dotted keys.

File syntax: one ``key = value`` per line, ``#`` starts a comment, blank
lines ignored. Unknown keys are rejected. Every key has a documented
default; the canonical serialization lists all keys in registry order, so
parse -> serialize -> parse is a fixed point. ``--set key=value`` overrides
(and the SSIA_SET environment variable, semicolon-separated) use the same
value syntax.
"""

from __future__ import annotations

import hashlib


class ConfigError(ValueError):
    """User-facing configuration problem (unknown key, bad value)."""


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected true/false, got {s!r}")


def _parse_floats(s: str):
    return [float(v) for v in s.split(",") if v.strip() != ""]


def _fmt_bool(v) -> str:
    return "true" if v else "false"


def _fmt_floats(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def _choice(options):
    def parse(s: str) -> str:
        if s not in options:
            raise ConfigError(f"expected one of {sorted(options)}, got {s!r}")
        return s
    return parse


# name -> (parse, format, default, help)
REGISTRY: dict = {}


def _key(name, parse, fmt, default, help_text):
    REGISTRY[name] = (parse, fmt, default, help_text)


_key("model.arch", _choice({"resnet-tiny-8", "resnet-18-like"}), str,
     "resnet-18-like", "backbone architecture")
_key("model.num_classes", int, repr, 10, "classifier output width")

_key("data.dir", str, str, "data/cifar10", "directory with the binary dataset files")
_key("data.augment", _parse_bool, _fmt_bool, True, "pad-4-reflect crop + flip during training")
_key("data.mean", _parse_floats, _fmt_floats, [0.4914, 0.4822, 0.4465],
     "per-channel normalization mean")
_key("data.std", _parse_floats, _fmt_floats, [0.2023, 0.1994, 0.2010],
     "per-channel normalization std")
_key("data.train_subset", int, repr, 0, "use only the first N train records (0 = all)")
_key("data.test_subset", int, repr, 0, "use only the first N test records (0 = all)")

_key("train.lr0", float, repr, 0.1, "initial learning rate of the cosine schedule")
_key("train.momentum", float, repr, 0.9, "SGD momentum")
_key("train.weight_decay", float, repr, 4e-5, "weight decay on conv/linear weights")
_key("train.epochs", int, repr, 100, "training epochs")
_key("train.batch_size", int, repr, 32, "mini-batch size")
_key("train.seed", int, repr, 0, "seed for every derived random stream")
_key("train.cosine_per_iteration", _parse_bool, _fmt_bool, False,
     "advance the cosine schedule per iteration instead of per epoch")
_key("train.checkpoint_every", int, repr, 0, "checkpoint cadence in epochs (0 = final only)")

_key("loss.lambda_task", float, repr, 1.0, "task-loss weight")
_key("loss.lambda_sb", float, repr, 0.2, "auxiliary-total weight")
_key("loss.per_block", _parse_floats, _fmt_floats, [1.0, 2.0, 3.0],
     "per-block weights, lowest tap first")

_key("ssia.enabled", _parse_bool, _fmt_bool, True, "attach blocks during training")
_key("ssia.scheme", _choice({"final", "cascaded", "identity"}), str, "cascaded",
     "signal-side tap scheme")
_key("ssia.hidden_width", int, repr, 64, "MLP bottleneck width")
_key("ssia.eta", float, repr, 0.5, "validity threshold on |signal|")
_key("ssia.upper_bound", float, repr, 10.0, "validity ceiling on |signal|")
_key("ssia.eps_loss", float, repr, 1e-8, "denominator guard of the block loss")
_key("ssia.eps_norm", float, repr, 1e-5, "variance guard of the standardization")
_key("ssia.lambda_s", float, repr, 1.0, "spatial-loss weight inside a block")
_key("ssia.lambda_c", float, repr, 3.0, "channel-loss weight inside a block")
_key("ssia.normalize_descriptors", _parse_bool, _fmt_bool, True,
     "standardize prediction-side descriptors before the MLPs")
_key("ssia.skip_first", _parse_bool, _fmt_bool, False,
     "ignore the auxiliary loss for the first ssia.skip_iters iterations")
_key("ssia.skip_iters", int, repr, 200, "length of the ignored window, in iterations")

_key("out.dir", str, str, "runs/default", "run output directory")


class ExperimentConfig:
    """Validated flat configuration; values live in a plain dict."""

    def __init__(self, values: dict | None = None):
        self.values = {name: spec[2] for name, spec in REGISTRY.items()}
        if values:
            for k, v in values.items():
                if k not in REGISTRY:
                    raise ConfigError(f"unknown config key {k!r}")
                self.values[k] = v

    def __getitem__(self, key: str):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        parse = REGISTRY[key][0]
        try:
            self.values[key] = parse(raw.strip())
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def apply_overrides(self, pairs) -> None:
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override must look like key=value, got {pair!r}")
            key, raw = pair.split("=", 1)
            self.set(key.strip(), raw)

    def canonical(self) -> str:
        lines = [f"{name} = {REGISTRY[name][1](self.values[name])}" for name in REGISTRY]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, raw = stripped.split("=", 1)
            cfg.set(key.strip(), raw)
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.parse(fh.read())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values
