"""Desk-scale training through the compressed forward path.

Every step recomputes the compressed weights what = quantize(sparsify(W))
(sparsify first, then quantize), runs the forward pass with them, and
backpropagates with the straight-through estimator: the keep mask passes
task gradients to surviving positions (pruned positions get zero), the
quantizer clamp zeroes gradients of saturated entries, and step sizes
receive their learned-step-size gradients. The objective adds the alignment
regularizer with a fixed or auto-scaled strength.

Networks are small MLPs (linear layers with ReLU, softmax cross-entropy
output). Activations between layers are optionally fake-quantized with an
unsigned range; the raw input layer is never activation-quantized since the
unsigned range assumes post-ReLU non-negativity. Everything is driven by the
toolkit RNG, so a (config, seed, dataset) triple reproduces a run exactly.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset
from .metrics import DeviationReport, deviation_report
from .quantize import (
    MODE_ACTIVATION,
    MODE_WEIGHT,
    QuantSpec,
    init_scale,
    quantize,
    quantize_backward,
)
from .regularize import (
    KIND_NONE,
    LAMBDA_AUTO,
    LambdaState,
    LossBreakdown,
    RegSpec,
    auto_lambda,
    reg_backward_parts,
    reg_value,
)
from .sparsity import SparsitySpec, sparsify
from .tensor import AXIS_INPUT, Matrix, Rng, ShapeError

MASK_RECOMPUTE = "recompute-each-step"
MASK_FROZEN = "frozen-after-warmup"

ACT_RELU = "relu"
ACT_SOFTMAX_OUT = "softmax-out"

_SCALE_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


def parse_aw(text: str) -> tuple[Optional[int], Optional[int]]:
    """Parse an activation/weight bit-width tag like ``A32/W4``.

    32 means full precision (no quantizer) on that side.
    """
    parts = text.upper().split("/")
    if len(parts) != 2 or not parts[0].startswith("A") or not parts[1].startswith("W"):
        raise ValueError(f"expected AX/WY notation, got {text!r}")
    try:
        a, w = int(parts[0][1:]), int(parts[1][1:])
    except ValueError:
        raise ValueError(f"expected AX/WY notation, got {text!r}") from None
    return (None if a == 32 else a), (None if w == 32 else w)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    reg: RegSpec = field(default_factory=RegSpec)
    mask_policy: str = MASK_RECOMPUTE
    warmup_epochs: int = 5
    aw: str = "A32/W32"
    sparsity: Optional[str] = None
    sparsity_axis: str = AXIS_INPUT
    hidden: tuple[int, ...] = (128, 128)
    cosine_lr: bool = True
    keep_dense_first: bool = False
    keep_dense_last: bool = False
    halved_unsigned: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.mask_policy not in (MASK_RECOMPUTE, MASK_FROZEN):
            raise ValueError(f"unknown mask policy {self.mask_policy!r}")
        parse_aw(self.aw)
        if self.sparsity is not None:
            SparsitySpec.parse(self.sparsity)


@dataclass
class Layer:
    w: np.ndarray
    bias: np.ndarray
    activation: str
    qspec_w: Optional[QuantSpec] = None
    qspec_x: Optional[QuantSpec] = None
    sspec: Optional[SparsitySpec] = None
    s_w: float = 1.0
    s_x: Optional[float] = None
    frozen_mask: Optional[np.ndarray] = None

    @property
    def compressed(self) -> bool:
        return self.qspec_w is not None or self.sspec is not None


@dataclass
class TrainState:
    config: TrainConfig
    layers: list
    rng: Rng
    step: int = 0
    epoch: int = 0
    lambda_state: LambdaState = field(default_factory=LambdaState)
    velocity: list = field(default_factory=list)
    # ring buffer of recent LossBreakdowns, surfaced in divergence reports
    recent: deque = field(default_factory=lambda: deque(maxlen=16))

    def mask_hash(self) -> int:
        """Digest of the current sparsity patterns (frozen-mask invariant)."""
        import zlib

        h = 0
        for layer in self.layers:
            if layer.sspec is not None:
                mask = _compressed_weights(layer, self)["mask"]
                h = zlib.crc32(np.packbits(mask).tobytes(), h)
        return h


def build_state(config: TrainConfig, input_dim: int, num_classes: int) -> TrainState:
    """Initialize layers, scales, and optimizer state from the seed."""
    rng = Rng(config.seed)
    a_bits, w_bits = parse_aw(config.aw)
    dims = [input_dim, *config.hidden, num_classes]
    num_layers = len(dims) - 1
    layers = []
    for i in range(num_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = rng.gaussian(fan_in * fan_out).reshape(fan_in, fan_out)
        w *= math.sqrt(2.0 / fan_in)
        dense = (i == 0 and config.keep_dense_first) or (
            i == num_layers - 1 and config.keep_dense_last
        )
        qspec_w = None if (w_bits is None or dense) else QuantSpec(w_bits, MODE_WEIGHT)
        sspec = None
        if config.sparsity is not None and not dense:
            sspec = SparsitySpec.parse(config.sparsity, axis=config.sparsity_axis)
            if fan_in % sspec.group != 0:
                sspec = replace(sspec, pad=True)
        # inputs to hidden/output layers are post-ReLU; the raw data input
        # stays full precision
        qspec_x = None
        if a_bits is not None and i > 0:
            qspec_x = QuantSpec(a_bits, MODE_ACTIVATION,
                                halved_unsigned=config.halved_unsigned)
        activation = ACT_SOFTMAX_OUT if i == num_layers - 1 else ACT_RELU
        layer = Layer(w=w, bias=np.zeros(fan_out), activation=activation,
                      qspec_w=qspec_w, qspec_x=qspec_x, sspec=sspec)
        if qspec_w is not None:
            base = sparsify(Matrix(w), sspec).values if sspec is not None else Matrix(w)
            layer.s_w = init_scale(base, qspec_w).scale
        layers.append(layer)
    state = TrainState(config=config, layers=layers, rng=rng)
    state.velocity = [
        {"w": np.zeros_like(l.w), "bias": np.zeros_like(l.bias), "s_w": 0.0, "s_x": 0.0}
        for l in layers
    ]
    return state


def _compressed_weights(layer: Layer, state: TrainState) -> dict:
    """Compute what = quantize(sparsify(W)) plus backward bookkeeping."""
    w = layer.w
    mask = None
    sparse_vals = w
    if layer.sspec is not None:
        use_frozen = (
            layer.frozen_mask is not None
            and state.config.mask_policy == MASK_FROZEN
            and state.epoch >= state.config.warmup_epochs
        )
        if use_frozen:
            mask = layer.frozen_mask
            sparse_vals = w * mask
        else:
            res = sparsify(Matrix(w), layer.sspec)
            mask = res.mask
            sparse_vals = res.values.data
            layer.frozen_mask = mask
    if layer.qspec_w is not None:
        qspec = layer.qspec_w.with_scale(layer.s_w)
        what = quantize(Matrix(sparse_vals), qspec).values.data
    else:
        what = sparse_vals
    return {"what": what, "mask": mask, "sparse_vals": sparse_vals}


def forward(state: TrainState, x: np.ndarray):
    """Compressed forward pass.

    ``x`` is (input_dim, batch); returns (logits, caches) where caches hold
    the tensors backward needs.
    """
    a = x
    if state.layers and a.shape[0] != state.layers[0].w.shape[0]:
        raise ShapeError(
            f"batch dim {a.shape[0]} != input dim {state.layers[0].w.shape[0]}"
        )
    caches = []
    for layer in state.layers:
        if not np.isfinite(layer.w).all():
            raise DivergenceError(
                f"weights non-finite at step {state.step} (epoch {state.epoch})"
            )
        cache = {"a_in": a}
        if layer.qspec_x is not None:
            if layer.s_x is None:
                layer.s_x = init_scale(Matrix(a), layer.qspec_x).scale
            qx = quantize(Matrix(a), layer.qspec_x.with_scale(layer.s_x))
            x_used = qx.values.data
        else:
            x_used = a
        cw = _compressed_weights(layer, state)
        with np.errstate(over="ignore", invalid="ignore"):
            # overflow to inf surfaces as a NaN loss -> DivergenceError
            z = cw["what"].T @ x_used + layer.bias[:, None]
        cache.update(cw, x_used=x_used, z=z)
        caches.append(cache)
        a = np.maximum(z, 0.0) if layer.activation == ACT_RELU else z
    return a, caches


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and the logits gradient.

    Non-finite logits produce a NaN loss, which the training loop reports as
    divergence.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        shifted = logits - logits.max(axis=0, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=0, keepdims=True)
    batch = labels.size
    picked = probs[labels, np.arange(batch)]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs.copy()
    grad[labels, np.arange(batch)] -= 1.0
    return loss, grad / batch


def _reg_terms(state: TrainState, caches) -> tuple[float, list]:
    """Regularizer value and per-layer gradient parts, averaged over the
    compressed layers."""
    spec = state.config.reg
    entries = []
    if spec.kind == KIND_NONE:
        return 0.0, entries
    compressed = [
        (i, layer) for i, layer in enumerate(state.layers) if layer.compressed
    ]
    if not compressed:
        return 0.0, entries
    total = 0.0
    for i, layer in compressed:
        what = caches[i]["what"]
        total += reg_value(layer.w, what, spec)
        g_w, g_what = reg_backward_parts(layer.w, what, spec)
        entries.append((i, g_w / len(compressed), g_what / len(compressed)))
    return total / len(compressed), entries


def backward(state: TrainState, caches, dlogits: np.ndarray, lam: float,
             reg_entries=None):
    """Gradients of J = task + lambda * reg w.r.t. all parameters.

    Task gradients flow through the compression by STE; the regularizer's
    compressed-side part is routed through the same mask/clamp path when
    ``detach_compressed`` is off.
    """
    grads = [
        {"w": None, "bias": None, "s_w": 0.0, "s_x": 0.0} for _ in state.layers
    ]
    reg_by_layer = {i: (gw, gwhat) for i, gw, gwhat in (reg_entries or [])}
    dz = dlogits
    for i in reversed(range(len(state.layers))):
        layer = state.layers[i]
        cache = caches[i]
        grads[i]["bias"] = dz.sum(axis=1)
        d_what = cache["x_used"] @ dz.T
        dx_used = cache["what"] @ dz

        if i in reg_by_layer and not state.config.reg.detach_compressed:
            d_what = d_what + lam * reg_by_layer[i][1]

        if layer.qspec_w is not None:
            qspec = layer.qspec_w.with_scale(layer.s_w)
            g_m, g_s = quantize_backward(
                Matrix(d_what), Matrix(cache["sparse_vals"]), qspec
            )
            d_sparse = g_m.data
            grads[i]["s_w"] = g_s
        else:
            d_sparse = d_what
        d_w = d_sparse * cache["mask"] if cache["mask"] is not None else d_sparse

        if i in reg_by_layer:
            d_w = d_w + lam * reg_by_layer[i][0]
        grads[i]["w"] = d_w

        if layer.qspec_x is not None:
            qspec_x = layer.qspec_x.with_scale(layer.s_x)
            g_x, g_sx = quantize_backward(
                Matrix(dx_used), Matrix(cache["a_in"]), qspec_x
            )
            dx = g_x.data
            grads[i]["s_x"] = g_sx
        else:
            dx = dx_used
        if i > 0:
            prev = caches[i - 1]
            dz = dx * (prev["z"] > 0.0)
    return grads


def loss_and_grads(state: TrainState, x: np.ndarray, labels: np.ndarray,
                   lam: Optional[float] = None):
    """One forward/backward evaluation; returns (breakdown, grads, logits)."""
    logits, caches = forward(state, x)
    task_loss, dlogits = softmax_cross_entropy(logits, labels)
    reg_loss, reg_entries = _reg_terms(state, caches)
    spec = state.config.reg
    if spec.kind == KIND_NONE:
        lam_used = 0.0
    elif lam is not None:
        lam_used = lam
    elif spec.lambda_mode == LAMBDA_AUTO:
        lam_used = auto_lambda(task_loss, reg_loss, state.lambda_state,
                               spec.ema_decay)
    else:
        lam_used = spec.lam
    grads = backward(state, caches, dlogits, lam_used, reg_entries)
    return LossBreakdown.combine(task_loss, reg_loss, lam_used), grads, logits


def apply_grads(state: TrainState, grads, lr: float) -> None:
    """SGD with momentum; step sizes are floored to stay positive."""
    mu = state.config.momentum
    for layer, g, v in zip(state.layers, grads, state.velocity):
        v["w"] = mu * v["w"] - lr * g["w"]
        layer.w = layer.w + v["w"]
        v["bias"] = mu * v["bias"] - lr * g["bias"]
        layer.bias = layer.bias + v["bias"]
        if layer.qspec_w is not None:
            v["s_w"] = mu * v["s_w"] - lr * g["s_w"]
            layer.s_w = max(layer.s_w + v["s_w"], _SCALE_FLOOR)
        if layer.qspec_x is not None and layer.s_x is not None:
            v["s_x"] = mu * v["s_x"] - lr * g["s_x"]
            layer.s_x = max(layer.s_x + v["s_x"], _SCALE_FLOOR)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    if not config.cosine_lr or config.epochs <= 1:
        return config.lr
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))


def evaluate(state: TrainState, x: np.ndarray, labels: np.ndarray) -> float:
    """Argmax accuracy through the compressed forward path."""
    if labels.size == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    logits, _ = forward(state, x.T)
    return float(np.mean(np.argmax(logits, axis=0) == labels))


def layer_deviation(state: TrainState) -> Optional[DeviationReport]:
    """Deviation of compressed layers' weights from their full copies."""
    pairs = []
    names = []
    for i, layer in enumerate(state.layers):
        if not layer.compressed:
            continue
        what = _compressed_weights(layer, state)["what"]
        pairs.append((Matrix(layer.w), Matrix(what)))
        names.append(f"layer{i}")
    if not pairs:
        return None
    return deviation_report(pairs, names)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    task_loss: float
    reg_loss: float
    lambda_used: float
    train_accuracy: float
    test_accuracy: float
    cosine_mean: float  # nan when nothing is compressed


@dataclass
class TrainResult:
    state: TrainState
    epochs: list
    steps: list  # (step, task_loss, reg_loss, lambda, batch_accuracy) rows
    final_accuracy: float
    deviation: Optional[DeviationReport]


def init_weights_from(state: TrainState, source: TrainState) -> TrainState:
    """Warm-start: copy weights/biases from a pretrained state and refresh
    the quantizer step sizes for the copied tensors."""
    if len(state.layers) != len(source.layers):
        raise ValueError("layer count mismatch between states")
    for layer, src in zip(state.layers, source.layers):
        if layer.w.shape != src.w.shape:
            raise ValueError(f"shape mismatch {layer.w.shape} vs {src.w.shape}")
        layer.w = src.w.copy()
        layer.bias = src.bias.copy()
        if layer.qspec_w is not None:
            base = (
                sparsify(Matrix(layer.w), layer.sspec).values
                if layer.sspec is not None else Matrix(layer.w)
            )
            layer.s_w = init_scale(base, layer.qspec_w).scale
    return state


def train(config: TrainConfig, dataset: Dataset,
          init_from: Optional[TrainState] = None) -> TrainResult:
    """Run the training loop; deterministic per (config, seed, dataset).

    ``init_from`` warm-starts weights and biases from a previous state
    (the fine-tuning protocol: pretrain dense, then compress and adapt).
    """
    state = build_state(config, dataset.dim, dataset.num_classes)
    if init_from is not None:
        init_weights_from(state, init_from)
    steps: list = []
    epochs: list = []
    num_train = dataset.train_y.size
    if num_train == 0:
        raise ValueError("train needs a nonempty dataset")
    for epoch in range(config.epochs):
        state.epoch = epoch
        lr = learning_rate(config, epoch)
        perm = state.rng.shuffled(num_train)
        task_sum = reg_sum = acc_sum = 0.0
        lam_last = 0.0
        nb = 0
        for start in range(0, num_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            x = dataset.train_x[idx].T
            y = dataset.train_y[idx]
            breakdown, grads, logits = loss_and_grads(state, x, y)
            state.recent.append(breakdown)
            if not math.isfinite(breakdown.total):
                trail = ", ".join(f"{b.total:.4g}" for b in state.recent)
                raise DivergenceError(
                    f"loss diverged at step {state.step} (epoch {epoch}): "
                    f"task={breakdown.task_loss} reg={breakdown.reg_loss} "
                    f"(recent totals: {trail})"
                )
            apply_grads(state, grads, lr)
            batch_acc = float(np.mean(np.argmax(logits, axis=0) == y))
            steps.append(
                (state.step, breakdown.task_loss, breakdown.reg_loss,
                 breakdown.lambda_used, batch_acc)
            )
            task_sum += breakdown.task_loss
            reg_sum += breakdown.reg_loss
            acc_sum += batch_acc
            lam_last = breakdown.lambda_used
            nb += 1
            state.step += 1
        dev = layer_deviation(state)
        epochs.append(
            EpochStats(
                epoch=epoch,
                task_loss=task_sum / nb,
                reg_loss=reg_sum / nb,
                lambda_used=lam_last,
                train_accuracy=acc_sum / nb,
                test_accuracy=evaluate(state, dataset.test_x, dataset.test_y),
                cosine_mean=dev.cosine_mean if dev else float("nan"),
            )
        )
    final_acc = evaluate(state, dataset.test_x, dataset.test_y)
    return TrainResult(
        state=state,
        epochs=epochs,
        steps=steps,
        final_accuracy=final_acc,
        deviation=layer_deviation(state),
    )
