"""Core numeric primitives: validated 2-D matrices, block traversal, and a
counter-based RNG.

Everything downstream (quantization, sparsification, metrics, training)
operates on ``Matrix`` values in 64-bit floats. The only place 32-bit floats
appear is the packed-codec boundary (see :mod:`nmquant.packing`).

RNG algorithm
-------------
``Rng`` is a counter-based SplitMix64 generator: output ``i`` of a stream with
seed ``s`` is ``mix64((s + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64)`` where
``mix64`` is the standard SplitMix64 finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

Uniform doubles are ``(raw >> 11) * 2**-53`` (exactly representable, so the
uniform stream is bit-identical on every IEEE-754 platform). Gaussian samples
use Box-Muller on consecutive raw pairs ``(r0, r1)``:

    u1 = ((r0 >> 11) + 1) * 2**-53   # in (0, 1], keeps log() finite
    u2 = (r1 >> 11) * 2**-53         # in [0, 1)
    z0 = sqrt(-2 ln u1) * cos(2 pi u2)
    z1 = sqrt(-2 ln u1) * sin(2 pi u2)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

AXIS_INPUT = "input-dim"
AXIS_FLAT = "flat-row-major"
AXES = (AXIS_INPUT, AXIS_FLAT)

_MTRX_MAGIC = b"MTRX"
_MTRX_HEADER = struct.Struct("<4sII4x")  # magic, rows, cols, 4 reserved bytes

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class BlockError(ValueError):
    """Matrix length along the block axis is not divisible by the group size."""


def _validated(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"matrix must be 2-D, got {arr.ndim}-D")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("matrix entries must be finite (no NaN/Inf)")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Matrix:
    """Immutable row-major float64 matrix.

    Rows index the input dimension and columns the output dimension, so a
    layer computes ``y = W^T x``. Entries are validated finite on
    construction; the backing array is read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _validated(self.data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def column(self, j: int) -> np.ndarray:
        return self.data[:, j]

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Matrix":
        return cls(np.asarray(rows, dtype=np.float64))

    # -- CSV (headerless, one row per line) ---------------------------------

    def to_csv_text(self) -> str:
        lines = [",".join(repr(float(v)) for v in row) for row in self.data]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv_text(cls, text: str) -> "Matrix":
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"CSV line {lineno}: {exc}") from None
        if not rows:
            raise ValueError("CSV contains no rows")
        width = len(rows[0])
        for lineno, row in enumerate(rows, start=1):
            if len(row) != width:
                raise ShapeError(
                    f"CSV line {lineno} has {len(row)} entries, expected {width}"
                )
        return cls(np.asarray(rows))

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def load_csv(cls, path) -> "Matrix":
        with open(path) as fh:
            return cls.from_csv_text(fh.read())

    # -- raw binary dump (16-byte header + little-endian float64 payload) ---

    def to_bytes(self) -> bytes:
        header = _MTRX_HEADER.pack(_MTRX_MAGIC, self.rows, self.cols)
        payload = self.data.astype("<f8").tobytes()
        return header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Matrix":
        if len(blob) < _MTRX_HEADER.size:
            raise ValueError("matrix dump truncated: missing header")
        magic, rows, cols = _MTRX_HEADER.unpack_from(blob)
        if magic != _MTRX_MAGIC:
            raise ValueError(f"bad matrix magic {magic!r}")
        expected = _MTRX_HEADER.size + 8 * rows * cols
        if len(blob) != expected:
            raise ValueError(
                f"matrix dump has {len(blob)} bytes, expected {expected}"
            )
        flat = np.frombuffer(blob, dtype="<f8", offset=_MTRX_HEADER.size)
        return cls(flat.reshape(rows, cols))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Matrix":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


MatrixLike = Union[Matrix, np.ndarray, Sequence[Sequence[float]]]


def as_array(w: MatrixLike) -> np.ndarray:
    """Coerce a matrix-like value to a validated float64 2-D array."""
    if isinstance(w, Matrix):
        return w.data
    return _validated(w)


def matmul(w: MatrixLike, x: MatrixLike) -> Matrix:
    """Layer product ``W^T x``.

    ``w`` is (m, n) with m the input dim; ``x`` is (m, k). The result is
    (n, k). Accumulation order is fixed for given operand shapes, so repeated
    calls on identical inputs are bit-identical within one build.
    """
    wa, xa = as_array(w), as_array(x)
    if wa.shape[0] != xa.shape[0]:
        raise ShapeError(
            f"matmul needs W.rows == x.rows, got {wa.shape} vs {xa.shape}"
        )
    return Matrix(wa.T @ xa)


@dataclass(frozen=True)
class BlockCursor:
    """Read view over one length-M block of a matrix.

    ``index`` holds flat row-major positions; ``-1`` marks zero-padding slots
    that read as 0.0 and are never written back.
    """

    matrix: Matrix
    axis: str
    block_len: int
    index: np.ndarray

    def values(self) -> np.ndarray:
        flat = self.matrix.data.reshape(-1)
        out = np.zeros(self.block_len)
        real = self.index >= 0
        out[real] = flat[self.index[real]]
        return out


def _block_index(rows: int, cols: int, axis: str, block_len: int, pad: bool) -> np.ndarray:
    """Flat positions arranged as (num_blocks, block_len), -1 for padding.

    Block order: for ``input-dim``, all blocks of column 0 (ascending row
    chunks), then column 1, etc. For ``flat-row-major``, consecutive chunks of
    the row-major flattening.
    """
    if axis not in AXES:
        raise ValueError(f"unknown block axis {axis!r}")
    if axis == AXIS_INPUT:
        length = rows
    else:
        length = rows * cols
    if length % block_len != 0:
        if not pad:
            raise BlockError(
                f"axis length {length} not divisible by group size {block_len} "
                "(enable zero-padding to round up)"
            )
        padded = (length + block_len - 1) // block_len * block_len
    else:
        padded = length
    if axis == AXIS_INPUT:
        per_col = np.full(padded, -1, dtype=np.int64)
        per_col[:length] = np.arange(length)
        grid = per_col[None, :] * cols + np.arange(cols)[:, None]  # (cols, padded)
        grid[:, length:] = -1
        return grid.reshape(-1, block_len)
    flat = np.full(padded, -1, dtype=np.int64)
    flat[:length] = np.arange(length)
    return flat.reshape(-1, block_len)


def blocks(w: MatrixLike, axis: str, block_len: int, pad: bool = False) -> list[BlockCursor]:
    """Partition ``w`` into length-``block_len`` blocks along ``axis``.

    Every element is visited exactly once; padding slots (when ``pad``) read
    as zero. Raises :class:`BlockError` for indivisible lengths with padding
    disabled.
    """
    m = w if isinstance(w, Matrix) else Matrix(as_array(w))
    idx = _block_index(m.rows, m.cols, axis, block_len, pad)
    return [BlockCursor(m, axis, block_len, row) for row in idx]


def block_view(arr: np.ndarray, axis: str, block_len: int, pad: bool = False):
    """Vectorized block gather.

    Returns ``(vals, index)`` where ``vals`` is (num_blocks, block_len) with
    padding slots equal to 0 and ``index`` the matching flat-position grid.
    Use :func:`block_scatter` to write block values back into matrix shape.
    """
    rows, cols = arr.shape
    index = _block_index(rows, cols, axis, block_len, pad)
    flat = arr.reshape(-1)
    vals = np.where(index >= 0, flat[np.clip(index, 0, None)], 0.0)
    return vals, index


def block_scatter(vals: np.ndarray, index: np.ndarray, rows: int, cols: int,
                  dtype=np.float64, fill=0) -> np.ndarray:
    """Inverse of :func:`block_view`; padding slots are dropped."""
    out = np.full(rows * cols, fill, dtype=dtype)
    real = index >= 0
    out[index[real]] = vals[real].astype(dtype, copy=False)
    return out.reshape(rows, cols)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


@dataclass
class Rng:
    """Counter-based SplitMix64 stream; see module docstring for the exact
    algorithm. Identical seeds produce identical streams on all platforms."""

    seed: int
    counter: int = 0

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) + idx * _GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53

    def gaussian(self, n: int) -> np.ndarray:
        """``n`` standard normal doubles via Box-Muller on raw pairs."""
        pairs = (n + 1) // 2
        r = self.raw(2 * pairs)
        u1 = ((r[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (r[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = rad * np.cos(ang)
        out[1::2] = rad * np.sin(ang)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """``n`` integers uniform on [0, bound) (multiply-shift reduction)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        u = self.uniform(n)
        return np.minimum((u * bound).astype(np.int64), bound - 1)

    def shuffled(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (Fisher-Yates on the stream)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        draws = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(draws[n - 1 - i] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def rand_matrix(rng: Rng, rows: int, cols: int, dist: str = "gaussian") -> Matrix:
    """Reproducible random matrix; ``dist`` is ``uniform`` or ``gaussian``."""
    if rows < 1 or cols < 1:
        raise ValueError("rand_matrix needs rows, cols >= 1")
    if dist == "uniform":
        flat = rng.uniform(rows * cols)
    elif dist == "gaussian":
        flat = rng.gaussian(rows * cols)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return Matrix(flat.reshape(rows, cols))
