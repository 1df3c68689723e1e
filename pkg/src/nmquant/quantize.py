"""Fake quantization with a learnable per-tensor step size.

The forward map is scale -> round-half-even -> clamp -> rescale:

    what = s * clamp(rint(w / s), qn, qp)

Weight mode uses the symmetric signed range ``[-2**(b-1), 2**(b-1) - 1]``;
activation mode is unsigned with ``[0, 2**b - 1]`` by default (the halved
variant ``[0, 2**(b-1)]`` is available behind a flag). Gradients follow the
straight-through estimator: the rounding is treated as identity inside the
clamp window and zero outside, and the step-size gradient uses the standard
learned-step-size form with gradient scale ``1 / sqrt(numel * qp)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensor import Matrix, MatrixLike, ShapeError, as_array

MODE_WEIGHT = "weight-symmetric"
MODE_ACTIVATION = "activation-unsigned"
MODES = (MODE_WEIGHT, MODE_ACTIVATION)

SUPPORTED_BITS = (2, 3, 4, 8, 16)


class ScaleError(ValueError):
    """Step size is non-positive or non-finite."""


@dataclass(frozen=True)
class QuantSpec:
    """Bit-width, range mode, and step size of one fake-quantized tensor.

    ``halved_unsigned`` switches the unsigned upper bound from ``2**b - 1``
    to ``2**(b-1)``.
    """

    bits: int
    mode: str = MODE_WEIGHT
    scale: float = 1.0
    halved_unsigned: bool = False

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ScaleError(f"scale must be finite and > 0, got {self.scale}")

    @property
    def qn(self) -> int:
        if self.mode == MODE_WEIGHT:
            return -(2 ** (self.bits - 1))
        return 0

    @property
    def qp(self) -> int:
        if self.mode == MODE_WEIGHT:
            return 2 ** (self.bits - 1) - 1
        if self.halved_unsigned:
            return 2 ** (self.bits - 1)
        return 2 ** self.bits - 1

    def with_scale(self, scale: float) -> "QuantSpec":
        return dataclasses.replace(self, scale=float(scale))


@dataclass(frozen=True)
class QuantResult:
    """Dequantized values ``s * q``, integer codes, and the clamp mask."""

    values: Matrix
    codes: np.ndarray
    clamp_mask: np.ndarray


def quantize(w: MatrixLike, spec: QuantSpec) -> QuantResult:
    """Fake-quantize ``w`` per ``spec``.

    Idempotent for a fixed spec: re-quantizing the returned values reproduces
    them bit-exactly.
    """
    arr = as_array(w)
    s = spec.scale
    if not (np.isfinite(s) and s > 0):
        raise ScaleError(f"scale must be finite and > 0, got {s}")
    r = np.rint(arr / s)
    codes = np.clip(r, spec.qn, spec.qp).astype(np.int64)
    clamp_mask = (r < spec.qn) | (r > spec.qp)
    return QuantResult(values=Matrix(s * codes), codes=codes, clamp_mask=clamp_mask)


class ScaleInit(NamedTuple):
    scale: float
    degenerate: bool


def init_scale(w: MatrixLike, spec: QuantSpec) -> ScaleInit:
    """Initial step size ``2 * mean(|w|) / sqrt(qp)``.

    An all-zero tensor gets a machine-epsilon floor and is flagged
    degenerate.
    """
    arr = as_array(w)
    if arr.size == 0:
        raise ValueError("init_scale needs a non-empty matrix")
    s = 2.0 * float(np.mean(np.abs(arr))) / np.sqrt(spec.qp)
    if s <= 0.0:
        return ScaleInit(float(np.finfo(np.float64).eps), True)
    return ScaleInit(s, False)


def quantize_backward(upstream_grad: MatrixLike, w: MatrixLike,
                      spec: QuantSpec) -> tuple[Matrix, float]:
    """Straight-through gradients of the fake-quantizer.

    Returns ``(grad_w, grad_s)``: the upstream gradient passed through where
    codes are inside the clamp window (zero where clamped), and the step-size
    gradient

        grad_s = g * sum(upstream * dwhat_ds),   g = 1 / sqrt(numel * qp)

    with ``dwhat_ds`` equal to ``rint(w/s) - w/s`` inside the window and to
    the saturated bound outside.
    """
    g_up = as_array(upstream_grad)
    arr = as_array(w)
    if g_up.shape != arr.shape:
        raise ShapeError(f"gradient shape {g_up.shape} != weight shape {arr.shape}")
    s = spec.scale
    t = arr / s
    r = np.rint(t)
    low = r < spec.qn
    high = r > spec.qp
    inside = ~(low | high)
    grad_w = np.where(inside, g_up, 0.0)
    dwhat_ds = np.where(inside, r - t, 0.0) + low * float(spec.qn) + high * float(spec.qp)
    g = 1.0 / np.sqrt(arr.size * spec.qp)
    grad_s = g * float(np.sum(g_up * dwhat_ds))
    return Matrix(grad_w), grad_s
