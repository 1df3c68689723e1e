"""Alignment regularizers between full-precision and compressed weights.

The cosine regularizer penalizes mean angular deviation across columns,

    reg(W, What) = (1/n) * sum_i (1 - cos(w_i, what_i)),

which pulls weight directions toward their compressed counterparts without
constraining magnitudes. The squared-difference baseline and an automatic
strength schedule (EMA of the task/regularizer loss ratio) are included for
ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import column_cosines, degenerate_columns
from .tensor import Matrix, MatrixLike, ShapeError, as_array

KIND_COSINE = "cosine"
KIND_L2 = "l2"
KIND_NONE = "none"
KINDS = (KIND_COSINE, KIND_L2, KIND_NONE)

LAMBDA_FIXED = "fixed"
LAMBDA_AUTO = "auto-scale"

_RATIO_FLOOR = 1e-8
_LAMBDA_LO = 1e-4
_LAMBDA_HI = 1e4


@dataclass(frozen=True)
class RegSpec:
    """Regularizer kind, strength schedule, and gradient-path switch.

    With ``detach_compressed`` (the default) gradients flow only through the
    full-precision argument; the compressed weights are treated as constant.
    """

    kind: str = KIND_NONE
    lambda_mode: str = LAMBDA_FIXED
    lam: float = 1.0
    ema_decay: float = 0.99
    detach_compressed: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.lambda_mode not in (LAMBDA_FIXED, LAMBDA_AUTO):
            raise ValueError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in (0, 1)")


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's objective decomposition."""

    task_loss: float
    reg_loss: float
    lambda_used: float
    total: float

    @classmethod
    def combine(cls, task_loss: float, reg_loss: float, lambda_used: float) -> "LossBreakdown":
        return cls(task_loss, reg_loss, lambda_used,
                   task_loss + lambda_used * reg_loss)


def cos_reg(w: MatrixLike, what: MatrixLike) -> float:
    """Mean angular misalignment ``(1/n) sum_i (1 - cos(w_i, what_i))``."""
    cos = column_cosines(w, what)
    return float(np.mean(1.0 - cos))


def l2_reg(w: MatrixLike, what: MatrixLike) -> float:
    """Mean squared elementwise difference."""
    a, b = as_array(w), as_array(what)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def reg_backward_parts(w: MatrixLike, what: MatrixLike,
                       spec: RegSpec) -> tuple[np.ndarray, np.ndarray]:
    """Partial gradients (d/dW, d/dWhat) of the selected regularizer.

    Zero-norm (flagged) columns contribute zero gradient on both sides. The
    second part is only meaningful when the caller routes it through the
    compression path (``detach_compressed`` off).
    """
    a, b = as_array(w), as_array(what)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if spec.kind == KIND_NONE:
        z = np.zeros_like(a)
        return z, z.copy()
    if spec.kind == KIND_L2:
        g = (2.0 / a.size) * (a - b)
        return g, -g
    # cosine: per-column angular gradient, no radial component through W
    n = a.shape[1]
    na2 = np.sum(a * a, axis=0)
    nb2 = np.sum(b * b, axis=0)
    ok = ~degenerate_columns(a, b)
    na2_s = np.where(ok, na2, 1.0)
    nb2_s = np.where(ok, nb2, 1.0)
    denom = np.sqrt(na2_s * nb2_s)
    cos = np.sum(a * b, axis=0) / denom
    d_w = -(b / denom - a * (cos / na2_s)) / n
    d_what = -(a / denom - b * (cos / nb2_s)) / n
    d_w[:, ~ok] = 0.0
    d_what[:, ~ok] = 0.0
    return d_w, d_what


def reg_backward(w: MatrixLike, what: MatrixLike, spec: RegSpec) -> Matrix:
    """Gradient of the regularizer w.r.t. the full-precision weights.

    When ``detach_compressed`` is off the straight-through path is added,
    treating the compression map as identity.
    """
    d_w, d_what = reg_backward_parts(w, what, spec)
    if spec.detach_compressed:
        return Matrix(d_w)
    return Matrix(d_w + d_what)


def reg_value(w: MatrixLike, what: MatrixLike, spec: RegSpec) -> float:
    if spec.kind == KIND_COSINE:
        return cos_reg(w, what)
    if spec.kind == KIND_L2:
        return l2_reg(w, what)
    return 0.0


@dataclass
class LambdaState:
    """EMA state for the automatic regularizer strength; single writer."""

    ema: float | None = None


def auto_lambda(task_loss: float, reg_loss: float, state: LambdaState,
                decay: float = 0.99) -> float:
    """Strength keeping the regularizer on the task loss's scale.

    The raw ratio ``task / max(reg, 1e-8)`` is smoothed by an EMA (first call
    initializes it) and clamped to ``[1e-4, 1e4]``.
    """
    if task_loss < 0 or reg_loss < 0:
        raise ValueError("losses must be non-negative")
    ratio = task_loss / max(reg_loss, _RATIO_FLOOR)
    if state.ema is None:
        state.ema = ratio
    else:
        state.ema = decay * state.ema + (1.0 - decay) * ratio
    return float(min(max(state.ema, _LAMBDA_LO), _LAMBDA_HI))


def upper_bound(w: MatrixLike, what: MatrixLike) -> np.ndarray:
    """Per-column angular bound ``2 ||w_i||^2 (1 - cos theta_i)``.

    Dominates ``||w_i - what_i||^2`` whenever ``||what_i|| <= ||w_i||``.
    """
    a, b = as_array(w), as_array(what)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    cos = column_cosines(a, b)
    norm_sq = np.sum(a * a, axis=0)
    return 2.0 * norm_sq * (1.0 - cos)
