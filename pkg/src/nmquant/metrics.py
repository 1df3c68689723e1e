"""Deviation measurement between full-precision and compressed weights.

Columns of the weight matrix are the per-output weight vectors, so cosine
similarity is reported column-wise. SQNR is the decibel ratio of mean column
signal energy to mean column noise energy; zero noise yields an infinite
sentinel that serializes as the string ``"inf"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import MatrixLike, ShapeError, as_array


def _pair(w: MatrixLike, what: MatrixLike) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_array(w), as_array(what)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def degenerate_columns(w: MatrixLike, what: MatrixLike) -> np.ndarray:
    """Columns where either argument has zero norm (cosine undefined)."""
    a, b = _pair(w, what)
    return (np.max(np.abs(a), axis=0) == 0.0) | (np.max(np.abs(b), axis=0) == 0.0)


def column_cosines(w: MatrixLike, what: MatrixLike) -> np.ndarray:
    """Cosine similarity per column.

    Zero-norm columns in either argument get cosine 0 (flagged via
    :func:`degenerate_columns`) instead of propagating NaN. Columns are
    pre-scaled by their max magnitude (the cosine is scale invariant), so no
    finite input overflows, and the denominator is
    ``sqrt(sum(a^2) * sum(b^2))``, which makes the cosine of bit-identical
    columns exactly 1.0.
    """
    a, b = _pair(w, what)
    sa = np.max(np.abs(a), axis=0)
    sb = np.max(np.abs(b), axis=0)
    ok = (sa > 0.0) & (sb > 0.0)
    an = a / np.where(sa > 0.0, sa, 1.0)
    bn = b / np.where(sb > 0.0, sb, 1.0)
    na2 = np.sum(an * an, axis=0)
    nb2 = np.sum(bn * bn, axis=0)
    denom = np.sqrt(na2 * nb2)
    dots = np.sum(an * bn, axis=0)
    cos = np.where(ok, dots / np.where(ok, denom, 1.0), 0.0)
    return np.clip(cos, -1.0, 1.0)


def sqnr_db(w: MatrixLike, what: MatrixLike) -> float:
    """``10 log10(mean_i ||w_i||^2 / mean_i ||w_i - what_i||^2)`` in dB.

    Returns ``math.inf`` when the mean noise energy is exactly zero. The
    ratio is scale invariant, so both operands are pre-scaled by the joint
    max magnitude to keep finite inputs from overflowing.
    """
    a, b = _pair(w, what)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    if scale > 0.0:
        a = a / scale
        b = b / scale
    signal = float(np.mean(np.sum(a * a, axis=0)))
    diff = a - b
    noise = float(np.mean(np.sum(diff * diff, axis=0)))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / noise)


@dataclass(frozen=True)
class LayerDeviation:
    name: str
    cosine_mean: float
    cosine_std: float
    sqnr_db: float
    num_columns: int
    flagged_columns: int


@dataclass(frozen=True)
class DeviationReport:
    """Layer-wise cosine/SQNR summary, aggregated mean +/- std across layers.

    Standard deviations are population (ddof=0); a single layer therefore
    reports std 0. If any layer has infinite SQNR the aggregate SQNR is the
    infinite sentinel with std 0.
    """

    cosine_mean: float
    cosine_std: float
    sqnr_db: float
    sqnr_std: float
    num_columns: int
    per_layer: tuple[LayerDeviation, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        def enc(x: float):
            return "inf" if math.isinf(x) else x

        return {
            "cosine_mean": self.cosine_mean,
            "cosine_std": self.cosine_std,
            "sqnr_db": enc(self.sqnr_db),
            "sqnr_std": self.sqnr_std,
            "num_columns": self.num_columns,
            "per_layer": [
                {
                    "name": l.name,
                    "cosine_mean": l.cosine_mean,
                    "cosine_std": l.cosine_std,
                    "sqnr_db": enc(l.sqnr_db),
                    "num_columns": l.num_columns,
                    "flagged_columns": l.flagged_columns,
                }
                for l in self.per_layer
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviationReport":
        def dec(x):
            return math.inf if x == "inf" else float(x)

        layers = tuple(
            LayerDeviation(
                name=l["name"],
                cosine_mean=float(l["cosine_mean"]),
                cosine_std=float(l["cosine_std"]),
                sqnr_db=dec(l["sqnr_db"]),
                num_columns=int(l["num_columns"]),
                flagged_columns=int(l["flagged_columns"]),
            )
            for l in d["per_layer"]
        )
        return cls(
            cosine_mean=float(d["cosine_mean"]),
            cosine_std=float(d["cosine_std"]),
            sqnr_db=dec(d["sqnr_db"]),
            sqnr_std=float(d["sqnr_std"]),
            num_columns=int(d["num_columns"]),
            per_layer=layers,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv_text(self) -> str:
        def enc(x: float) -> str:
            return "inf" if math.isinf(x) else repr(x)

        lines = ["layer,cosine_mean,cosine_std,sqnr_db,num_columns,flagged_columns"]
        for l in self.per_layer:
            lines.append(
                f"{l.name},{enc(l.cosine_mean)},{enc(l.cosine_std)},"
                f"{enc(l.sqnr_db)},{l.num_columns},{l.flagged_columns}"
            )
        lines.append(
            f"summary,{enc(self.cosine_mean)},{enc(self.cosine_std)},"
            f"{enc(self.sqnr_db)},{self.num_columns},"
        )
        return "\n".join(lines) + "\n"


def deviation_report(pairs, names=None) -> DeviationReport:
    """Aggregate per-layer deviations for ``pairs`` of (full, compressed).

    Per layer, column cosines are averaged and SQNR computed over columns;
    the report is the unweighted mean +/- std of those layer summaries.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("deviation_report needs at least one layer")
    if names is None:
        names = [f"layer{i}" for i in range(len(pairs))]
    layers = []
    for name, (w, what) in zip(names, pairs):
        cos = column_cosines(w, what)
        flagged = int(np.count_nonzero(degenerate_columns(w, what)))
        layers.append(
            LayerDeviation(
                name=name,
                cosine_mean=float(np.mean(cos)),
                cosine_std=float(np.std(cos)),
                sqnr_db=sqnr_db(w, what),
                num_columns=int(cos.size),
                flagged_columns=flagged,
            )
        )
    cos_vals = np.array([l.cosine_mean for l in layers])
    sq_vals = [l.sqnr_db for l in layers]
    if any(math.isinf(v) for v in sq_vals):
        agg_sqnr, agg_sqnr_std = math.inf, 0.0
    else:
        agg_sqnr = float(np.mean(sq_vals))
        agg_sqnr_std = float(np.std(sq_vals))
    return DeviationReport(
        cosine_mean=float(np.mean(cos_vals)),
        cosine_std=float(np.std(cos_vals)),
        sqnr_db=agg_sqnr,
        sqnr_std=agg_sqnr_std,
        num_columns=int(sum(l.num_columns for l in layers)),
        per_layer=tuple(layers),
    )
