"""Plain-text experiment configuration.

The format is one ``key = value`` pair per line; ``#`` starts a comment and
blank lines are ignored. Unknown keys are rejected. Every run directory gets
a resolved echo of its configuration (all keys, schema order), and re-running
from that echo reproduces the run bit-exactly.

Schema (defaults in parentheses):

    name (run)                   run/cell name, used for the output folder
    seed (0)                     training seed
    data_seed (0)                dataset generation/split seed
    out ()                       output root; empty means $NMQUANT_OUT or ./runs
    dataset (blobs)              blobs | two-moons | idx-images
    dataset.classes (10)         blobs class count
    dataset.per_class (500)      blobs samples per class
    dataset.dim (32)             blobs feature dimension
    dataset.center_scale (1.0)   blobs center spread
    dataset.noise (1.0)          blobs within-class noise / moons noise
    dataset.images ()            IDX image file (idx-images)
    dataset.labels ()            IDX label file (idx-images)
    epochs (60)                  training epochs
    batch_size (128)
    lr (0.05)
    momentum (0.9)
    cosine_lr (true)             cosine learning-rate decay
    hidden (128,128)             comma-separated hidden widths
    aw (A32/W32)                 activation/weight bit-widths, 32 = FP
    sparsity (none)              none or N:M, e.g. 2:4
    sparsity_axis (input-dim)    input-dim | flat-row-major
    mask_policy (recompute-each-step)  or frozen-after-warmup
    warmup_epochs (5)
    reg (none)                   none | l2 | cosine
    reg.lambda_mode (auto-scale) fixed | auto-scale
    reg.lambda (1.0)             strength when fixed
    reg.ema_decay (0.99)
    reg.detach_compressed (true)
    keep_dense_first (false)     exempt the first layer from compression
    keep_dense_last (false)      exempt the last layer
    halved_unsigned (false)      unsigned activation range 2^(b-1) instead of 2^b-1
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .data import KIND_BLOBS, KIND_IDX, KIND_MOONS, Dataset, make_dataset
from .regularize import (
    KIND_COSINE,
    KIND_L2,
    KIND_NONE,
    LAMBDA_AUTO,
    LAMBDA_FIXED,
    RegSpec,
)
from .sparsity import SparsitySpec
from .tensor import AXES, AXIS_INPUT, Rng
from .training import MASK_FROZEN, MASK_RECOMPUTE, TrainConfig, parse_aw

ENV_OUT_ROOT = "NMQUANT_OUT"
DEFAULT_OUT_ROOT = "runs"


class ConfigError(ValueError):
    """Configuration text is invalid."""


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_hidden(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated widths, got {text!r}") from None


@dataclass
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    data_seed: int = 0
    out: str = ""
    dataset: str = KIND_BLOBS
    dataset_classes: int = 10
    dataset_per_class: int = 500
    dataset_dim: int = 32
    dataset_center_scale: float = 1.0
    dataset_noise: float = 1.0
    dataset_images: str = ""
    dataset_labels: str = ""
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    cosine_lr: bool = True
    hidden: tuple = (128, 128)
    aw: str = "A32/W32"
    sparsity: str = "none"
    sparsity_axis: str = AXIS_INPUT
    mask_policy: str = MASK_RECOMPUTE
    warmup_epochs: int = 5
    reg: str = KIND_NONE
    reg_lambda_mode: str = LAMBDA_AUTO
    reg_lambda: float = 1.0
    reg_ema_decay: float = 0.99
    reg_detach_compressed: bool = True
    keep_dense_first: bool = False
    keep_dense_last: bool = False
    halved_unsigned: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.dataset not in (KIND_BLOBS, KIND_MOONS, KIND_IDX):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.sparsity_axis not in AXES:
            raise ConfigError(f"unknown sparsity_axis {self.sparsity_axis!r}")
        if self.mask_policy not in (MASK_RECOMPUTE, MASK_FROZEN):
            raise ConfigError(f"unknown mask_policy {self.mask_policy!r}")
        if self.reg not in (KIND_NONE, KIND_L2, KIND_COSINE):
            raise ConfigError(f"unknown reg {self.reg!r}")
        if self.reg_lambda_mode not in (LAMBDA_FIXED, LAMBDA_AUTO):
            raise ConfigError(f"unknown reg.lambda_mode {self.reg_lambda_mode!r}")
        try:
            parse_aw(self.aw)
            if self.sparsity != "none":
                SparsitySpec.parse(self.sparsity)
            self.to_train_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_train_config(self) -> TrainConfig:
        reg = RegSpec(
            kind=self.reg,
            lambda_mode=self.reg_lambda_mode,
            lam=self.reg_lambda,
            ema_decay=self.reg_ema_decay,
            detach_compressed=self.reg_detach_compressed,
        )
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            seed=self.seed,
            reg=reg,
            mask_policy=self.mask_policy,
            warmup_epochs=self.warmup_epochs,
            aw=self.aw,
            sparsity=None if self.sparsity == "none" else self.sparsity,
            sparsity_axis=self.sparsity_axis,
            hidden=self.hidden,
            cosine_lr=self.cosine_lr,
            keep_dense_first=self.keep_dense_first,
            keep_dense_last=self.keep_dense_last,
            halved_unsigned=self.halved_unsigned,
        )

    def make_data(self) -> Dataset:
        rng = Rng(self.data_seed)
        if self.dataset == KIND_BLOBS:
            return make_dataset(
                KIND_BLOBS, rng,
                classes=self.dataset_classes,
                per_class=self.dataset_per_class,
                dim=self.dataset_dim,
                center_scale=self.dataset_center_scale,
                noise=self.dataset_noise,
            )
        if self.dataset == KIND_MOONS:
            return make_dataset(
                KIND_MOONS, rng,
                per_class=self.dataset_per_class,
                noise=self.dataset_noise,
            )
        return make_dataset(
            KIND_IDX, rng,
            images=self.dataset_images,
            labels=self.dataset_labels,
        )

    def out_root(self) -> str:
        if self.out:
            return self.out
        return os.environ.get(ENV_OUT_ROOT, DEFAULT_OUT_ROOT)


# key in config text -> (attribute, parser, formatter)
def _fmt_bool(v: bool) -> str:
    return "true" if v else "false"


def _fmt_hidden(v: tuple) -> str:
    return ",".join(str(x) for x in v)


_KEYS = {
    "name": ("name", str, str),
    "seed": ("seed", int, str),
    "data_seed": ("data_seed", int, str),
    "out": ("out", str, str),
    "dataset": ("dataset", str, str),
    "dataset.classes": ("dataset_classes", int, str),
    "dataset.per_class": ("dataset_per_class", int, str),
    "dataset.dim": ("dataset_dim", int, str),
    "dataset.center_scale": ("dataset_center_scale", float, repr),
    "dataset.noise": ("dataset_noise", float, repr),
    "dataset.images": ("dataset_images", str, str),
    "dataset.labels": ("dataset_labels", str, str),
    "epochs": ("epochs", int, str),
    "batch_size": ("batch_size", int, str),
    "lr": ("lr", float, repr),
    "momentum": ("momentum", float, repr),
    "cosine_lr": ("cosine_lr", _parse_bool, _fmt_bool),
    "hidden": ("hidden", _parse_hidden, _fmt_hidden),
    "aw": ("aw", str, str),
    "sparsity": ("sparsity", str, str),
    "sparsity_axis": ("sparsity_axis", str, str),
    "mask_policy": ("mask_policy", str, str),
    "warmup_epochs": ("warmup_epochs", int, str),
    "reg": ("reg", str, str),
    "reg.lambda_mode": ("reg_lambda_mode", str, str),
    "reg.lambda": ("reg_lambda", float, repr),
    "reg.ema_decay": ("reg_ema_decay", float, repr),
    "reg.detach_compressed": ("reg_detach_compressed", _parse_bool, _fmt_bool),
    "keep_dense_first": ("keep_dense_first", _parse_bool, _fmt_bool),
    "keep_dense_last": ("keep_dense_last", _parse_bool, _fmt_bool),
    "halved_unsigned": ("halved_unsigned", _parse_bool, _fmt_bool),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; unknown keys and malformed lines are errors."""
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, parser, _ = _KEYS[key]
        try:
            setattr(cfg, attr, parser(value))
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def echo_config(cfg: ExperimentConfig) -> str:
    """Canonical resolved text: every key, schema order."""
    lines = []
    for key, (attr, _, fmt) in _KEYS.items():
        lines.append(f"{key} = {fmt(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"
