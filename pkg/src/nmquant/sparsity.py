"""Structured N:M magnitude sparsification.

Each group of M consecutive elements keeps its N largest-magnitude entries
verbatim and zeroes the rest. Ties at the selection threshold keep the lowest
index, so every block has exactly N survivors (required for the packed codec
and for hardware-style 2:4 layouts).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .tensor import (
    AXES,
    AXIS_INPUT,
    Matrix,
    MatrixLike,
    ShapeError,
    as_array,
    block_scatter,
    block_view,
)

PRESETS = ((2, 4), (2, 8), (2, 16))


@dataclass(frozen=True)
class SparsitySpec:
    """Keep ``keep`` of every ``group`` consecutive elements along ``axis``."""

    keep: int
    group: int
    axis: str = AXIS_INPUT
    pad: bool = False

    def __post_init__(self):
        if not (1 <= self.keep < self.group):
            raise ValueError(
                f"need 1 <= keep < group, got {self.keep}:{self.group}"
            )
        if self.axis not in AXES:
            raise ValueError(f"unknown block axis {self.axis!r}")

    @classmethod
    def parse(cls, text: str, axis: str = AXIS_INPUT, pad: bool = False) -> "SparsitySpec":
        """Parse ``"N:M"`` notation, e.g. ``"2:4"``."""
        try:
            n, m = (int(part) for part in text.split(":"))
        except ValueError:
            raise ValueError(f"expected N:M notation, got {text!r}") from None
        return cls(n, m, axis=axis, pad=pad)

    @property
    def label(self) -> str:
        return f"{self.keep}:{self.group}"


@dataclass(frozen=True)
class SparseResult:
    """Sparsified values, the boolean keep mask, and per-block thresholds.

    ``thresholds[k]`` is the N-th largest absolute value of block ``k``
    (block order as documented in :func:`nmquant.tensor.block_view`).
    """

    values: Matrix
    mask: np.ndarray
    thresholds: np.ndarray


def sparsify(w: MatrixLike, spec: SparsitySpec) -> SparseResult:
    """Apply N:M magnitude sparsification to ``w``.

    Survivors are kept unmodified; within-block magnitude ties keep the
    lowest index. Padding blocks (when ``spec.pad``) may select virtual zero
    slots, which are simply dropped on scatter.
    """
    arr = as_array(w)
    rows, cols = arr.shape
    vals, index = block_view(arr, spec.axis, spec.group, spec.pad)
    order = np.argsort(-np.abs(vals), axis=1, kind="stable")
    nb = vals.shape[0]
    rows_idx = np.arange(nb)[:, None]
    keep_idx = order[:, : spec.keep]
    mask_blocks = np.zeros_like(vals, dtype=bool)
    mask_blocks[rows_idx, keep_idx] = True
    thresholds = np.abs(vals)[np.arange(nb), order[:, spec.keep - 1]]
    mask = block_scatter(mask_blocks, index, rows, cols, dtype=bool, fill=False)
    return SparseResult(values=Matrix(arr * mask), mask=mask, thresholds=thresholds)


def sparsify_oracle(block, keep: int) -> np.ndarray:
    """Exhaustive keep-set selection for one block; test oracle only.

    Enumerates all C(M, keep) index sets, picks the one with maximal kept
    energy, ties resolved in favor of the lexicographically smallest set.
    """
    vals = np.asarray(block, dtype=np.float64)
    if vals.ndim != 1:
        raise ShapeError("oracle expects a 1-D block")
    best_energy = -1.0
    best_set = None
    for cand in itertools.combinations(range(vals.size), keep):
        energy = float(sum(vals[i] * vals[i] for i in cand))
        if energy > best_energy:
            best_energy = energy
            best_set = cand
    mask = np.zeros(vals.size, dtype=bool)
    mask[list(best_set)] = True
    return mask


def mask_apply(w: MatrixLike, mask: np.ndarray) -> Matrix:
    """Elementwise product with a frozen keep mask."""
    arr = as_array(w)
    m = np.asarray(mask, dtype=bool)
    if m.shape != arr.shape:
        raise ShapeError(f"mask shape {m.shape} != matrix shape {arr.shape}")
    return Matrix(arr * m)
