"""Executable checks of the sparsification error bounds.

For a vector ``w`` and its 2-of-4 magnitude sparsification ``what`` with
angle ``theta`` between them, the squared error ``E = ||w - what||^2``
satisfies

    L = ||w||^2 sin^2(theta)  <=  E  <=  U = 2 ||w||^2 (1 - cos(theta))

and ``cos(theta) >= 1/sqrt(2)``, with equality on ``+/-(a, a, a, a)`` blocks.
The gap obeys ``U - L = ||w||^2 (1 - cos theta)^2`` exactly, an O(theta^4)
quantity, so it is evaluated in the factored form; the naive difference of
``U`` and ``L`` cancels catastrophically below theta ~ 1e-2. ``sin^2`` is
evaluated as ``1 - cos^2`` throughout so all quantities share one cosine.

These relations assume pure sparsification (masking never increases the
norm). Composing quantization afterwards can push ``||what||`` above
``||w||`` and break the upper bound; that regime is measured and reported,
never asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .quantize import QuantSpec, init_scale, quantize
from .sparsity import SparsitySpec, sparsify
from .tensor import AXIS_FLAT, Matrix, Rng

_REL_SLACK = 1e-9  # float-evaluation slack on mathematically exact inequalities
_COS_FLOOR = 1.0 / math.sqrt(2.0)


class BoundViolation(AssertionError):
    """A bound that holds mathematically failed beyond numerical slack."""


@dataclass(frozen=True)
class BoundCheck:
    """All bound quantities for one vector."""

    theta: float
    cos_theta: float
    norm_sq: float
    error_sq: float
    lower: float
    upper: float
    energy_ratio: float
    upper_violated: bool = False

    @property
    def gap(self) -> float:
        return self.norm_sq * (1.0 - self.cos_theta) ** 2


def _as_vector(w) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64).reshape(-1)
    if not np.isfinite(arr).all():
        raise ValueError("vector entries must be finite")
    return arr


def _quantities(w: np.ndarray, what: np.ndarray):
    # cos via sqrt(sum_sq * sum_sq) so a fixed point gives cos == 1.0 exactly
    norm_sq = float(w @ w)
    kept_sq = float(what @ what)
    cos = float(w @ what) / math.sqrt(norm_sq * kept_sq) if kept_sq > 0 else 0.0
    cos = min(1.0, max(-1.0, cos))
    diff = w - what
    error_sq = float(diff @ diff)
    lower = norm_sq * (1.0 - cos * cos)
    upper = 2.0 * norm_sq * (1.0 - cos)
    return cos, norm_sq, error_sq, lower, upper


def check_bounds(w, spec: SparsitySpec | None = None,
                 quantizer: QuantSpec | None = None,
                 auto_scale: bool = True) -> BoundCheck:
    """Sparsify ``w`` and verify the error bounds.

    Without a quantizer the inequalities are asserted (raising
    :class:`BoundViolation` beyond numerical slack). With a quantizer the
    composed sparsify-then-quantize output is measured and upper-bound
    violations are only flagged; ``auto_scale`` re-derives the step size
    from the sparse values (else the quantizer's own scale is used).
    """
    vec = _as_vector(w)
    if spec is None:
        spec = SparsitySpec(2, 4, axis=AXIS_FLAT)
    if vec.size == 0 or not vec.any():
        raise ValueError("check_bounds needs a nonzero vector")
    if vec.size % spec.group != 0:
        raise ValueError(
            f"vector length {vec.size} not divisible by group {spec.group}"
        )
    mat = Matrix(vec.reshape(1, -1))
    flat_spec = SparsitySpec(spec.keep, spec.group, axis=AXIS_FLAT)
    sp = sparsify(mat, flat_spec)
    what = sp.values.data.reshape(-1)
    if quantizer is not None:
        if auto_scale:
            quantizer = quantizer.with_scale(init_scale(sp.values, quantizer).scale)
        what = quantize(sp.values, quantizer).values.data.reshape(-1)

    cos, norm_sq, error_sq, lower, upper = _quantities(vec, what)
    theta = math.acos(cos)
    ratio = float(what @ what) / norm_sq
    upper_violated = error_sq > upper * (1.0 + _REL_SLACK)

    if quantizer is None:
        if error_sq < lower * (1.0 - _REL_SLACK) or upper_violated:
            raise BoundViolation(
                f"bound inequality failed: L={lower} E={error_sq} U={upper}"
            )
        is_24 = (spec.keep, spec.group) == (2, 4)
        if is_24 and cos < _COS_FLOOR - 1e-12:
            raise BoundViolation(f"angular constraint failed: cos={cos}")
        if is_24 and ratio < 0.5 * (1.0 - _REL_SLACK):
            raise BoundViolation(f"energy floor failed: ratio={ratio}")
        upper_violated = False

    return BoundCheck(
        theta=theta,
        cos_theta=cos,
        norm_sq=norm_sq,
        error_sq=error_sq,
        lower=lower,
        upper=upper,
        energy_ratio=ratio,
        upper_violated=upper_violated,
    )


def gap_identity(w_norm_sq: float, theta: float) -> float:
    """Bound gap ``U - L`` at angle ``theta``, evaluated stably.

    Returns ``w_norm_sq * (1 - cos theta)^2`` and asserts it equals the exact
    rational evaluation of ``w_norm_sq * (2 - 2 cos - (1 - cos^2))`` to 1e-12
    relative error (the two are algebraically identical; the assert guards
    the floating-point evaluation).
    """
    if not 0.0 <= theta <= math.pi / 2.0 + 1e-12:
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")
    c = math.cos(theta)
    gap = w_norm_sq * (1.0 - c) * (1.0 - c)
    cf = Fraction(c)
    exact = Fraction(w_norm_sq) * (2 - 2 * cf - (1 - cf * cf))
    ref = float(exact)
    if ref != 0.0 and abs(gap - ref) > 1e-12 * abs(ref):
        raise BoundViolation(
            f"gap identity failed at theta={theta}: {gap} vs exact {ref}"
        )
    if ref == 0.0 and gap != 0.0:
        raise BoundViolation(f"gap identity failed at theta={theta}: {gap} vs 0")
    return gap


def gap_ulp_error(theta: float, w_norm_sq: float = 1.0) -> float:
    """Distance in ulps between the stable gap and its exact rational value."""
    c = math.cos(theta)
    gap = w_norm_sq * (1.0 - c) * (1.0 - c)
    exact = float(Fraction(w_norm_sq) * (2 - 2 * Fraction(c) - (1 - Fraction(c) ** 2)))
    if gap == exact:
        return 0.0
    return abs(gap - exact) / math.ulp(max(abs(exact), abs(gap)))


class EnergyRatio:
    __slots__ = ("ratio", "degenerate")

    def __init__(self, ratio: float, degenerate: bool):
        self.ratio = ratio
        self.degenerate = degenerate

    def __iter__(self):
        return iter((self.ratio, self.degenerate))


def energy_ratio(w, spec: SparsitySpec) -> EnergyRatio:
    """Preserved energy ``||what||^2 / ||w||^2`` under sparsification.

    For any N:M the ratio is at least N/M (the kept entries are the block
    maxima); a zero vector reports ratio 1 with the degenerate flag.
    """
    vec = _as_vector(w)
    if vec.size % spec.group != 0:
        raise ValueError(
            f"vector length {vec.size} not divisible by group {spec.group}"
        )
    norm_sq = float(vec @ vec)
    if norm_sq == 0.0:
        return EnergyRatio(1.0, True)
    flat_spec = SparsitySpec(spec.keep, spec.group, axis=AXIS_FLAT)
    what = sparsify(Matrix(vec.reshape(1, -1)), flat_spec).values.data
    return EnergyRatio(float(np.sum(what * what)) / norm_sq, False)


@dataclass(frozen=True)
class CampaignResult:
    """Batch bound check over many random vectors."""

    checks: tuple[BoundCheck, ...]
    min_cos: float
    min_energy_ratio: float
    max_lower_excess: float  # max of (L - E) / ||w||^2, <= slack if (A) holds
    max_upper_excess: float  # max of (E - U) / ||w||^2


def bounds_campaign(num: int, dim: int, dist: str, seed: int,
                     keep_checks: int = 0) -> CampaignResult:
    """Check the bounds on ``num`` random vectors of length ``dim``.

    ``dist`` is ``gaussian``, ``uniform`` (shifted to [-0.5, 0.5)), or
    ``cauchy`` (heavy-tailed). Vectorized: one sparsify call covers all
    vectors, with per-row reductions. Up to ``keep_checks`` individual
    :class:`BoundCheck` rows are retained for reporting/plotting.
    """
    if dim % 4 != 0:
        raise ValueError("dim must be divisible by 4")
    rng = Rng(seed)
    n = num * dim
    if dist == "gaussian":
        flat = rng.gaussian(n)
    elif dist == "uniform":
        flat = rng.uniform(n) - 0.5
    elif dist == "cauchy":
        flat = np.tan(np.pi * (rng.uniform(n) - 0.5))
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    w = flat.reshape(num, dim)
    # guard the measure-zero chance of an all-zero row (uniform could hit it)
    w[~w.any(axis=1), 0] = 1.0

    sp = sparsify(Matrix(w), SparsitySpec(2, 4, axis=AXIS_FLAT))
    what = sp.values.data
    norm_sq = np.sum(w * w, axis=1)
    kept_sq = np.sum(what * what, axis=1)
    diff = w - what
    error_sq = np.sum(diff * diff, axis=1)
    cos = np.clip(np.sum(w * what, axis=1) / np.sqrt(norm_sq * kept_sq), -1.0, 1.0)
    lower = norm_sq * (1.0 - cos * cos)
    upper = 2.0 * norm_sq * (1.0 - cos)

    checks = tuple(
        BoundCheck(
            theta=float(math.acos(cos[i])),
            cos_theta=float(cos[i]),
            norm_sq=float(norm_sq[i]),
            error_sq=float(error_sq[i]),
            lower=float(lower[i]),
            upper=float(upper[i]),
            energy_ratio=float(kept_sq[i] / norm_sq[i]),
        )
        for i in range(min(keep_checks, num))
    )
    return CampaignResult(
        checks=checks,
        min_cos=float(np.min(cos)),
        min_energy_ratio=float(np.min(kept_sq / norm_sq)),
        max_lower_excess=float(np.max((lower - error_sq) / norm_sq)),
        max_upper_excess=float(np.max((error_sq - upper) / norm_sq)),
    )


def campaign_csv(checks) -> str:
    """CSV (theta, E, L, U, gap) rows for the bound-trend plot."""
    lines = ["theta,error_sq,lower,upper,gap"]
    for c in sorted(checks, key=lambda c: c.theta):
        lines.append(
            f"{c.theta!r},{c.error_sq!r},{c.lower!r},{c.upper!r},{c.gap!r}"
        )
    return "\n".join(lines) + "\n"
