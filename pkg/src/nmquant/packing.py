"""Bit-exact packed storage for n-bit N:M sparse weight tensors.

File layout (".sqpk"):

* header, little-endian, 21 bytes: magic ``SQPK``, version u8, rows u32,
  cols u32, axis u8 (0 = input-dim, 1 = flat-row-major), N u8, M u8,
  bits u8, scale f32;
* payload: one record per block, concatenated MSB-first into a single
  bitstream, zero-padded to a whole number of bytes at the end of the
  tensor (records are not individually byte-aligned).

A 2:4 record stores the two kept positions as two 2-bit fields in ascending
order (4 index bits, matching the storage-table accounting even though 3
would suffice); every other N:M stores the lexicographic rank of the kept
index set in ``ceil(log2(C(M, N)))`` bits. Values follow as ``bits``-wide
two's-complement codes in position order. The codec is weights-only
(symmetric signed codes); the per-tensor scale is stored as float32, the one
documented rounding boundary of the toolkit.

Decoding validates magic, version, payload length, index ordering/rank
range, and that final padding bits are zero, so any single corrupted payload
bit either raises :class:`CorruptStreamError` or changes the decoded tensor.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .quantize import MODE_WEIGHT, QuantSpec
from .sparsity import SparsitySpec
from .tensor import AXIS_FLAT, AXIS_INPUT, block_scatter, block_view

_MAGIC = b"SQPK"
_VERSION = 1
_HEADER = struct.Struct("<4sBIIBBBBf")
HEADER_SIZE = _HEADER.size  # 21 bytes

_AXIS_CODE = {AXIS_INPUT: 0, AXIS_FLAT: 1}
_AXIS_NAME = {v: k for k, v in _AXIS_CODE.items()}


class MaskError(ValueError):
    """Mask is not a valid exactly-N-per-block pattern."""


class CodeRangeError(ValueError):
    """Integer code outside the representable signed range."""


class CorruptStreamError(ValueError):
    """Packed stream fails structural validation."""


def index_bits(keep: int, group: int) -> int:
    """Index metadata bits per block.

    2:4 uses 4 bits (two 2-bit positions, the hardware-style layout); all
    other N:M use the minimal combinatorial rank width.
    """
    if (keep, group) == (2, 4):
        return 4
    return max(1, math.ceil(math.log2(math.comb(group, keep))))


def bits_per_block(keep: int, group: int, bits: int) -> int:
    return keep * bits + index_bits(keep, group)


@dataclass(frozen=True)
class CompressionInfo:
    """Per-block storage accounting against a 32-bit dense baseline."""

    keep: int
    group: int
    bits: int
    dense_bits: int
    packed_bits: int

    @property
    def ratio(self) -> float:
        """Compression ratio, reported to 1 decimal (half-up)."""
        return _round_half_up(self.dense_bits / self.packed_bits, 1)

    @property
    def savings_percent(self) -> float:
        """Savings vs FP32 in percent, reported to 2 decimals (half-up)."""
        return _round_half_up(
            100.0 * (self.dense_bits - self.packed_bits) / self.dense_bits, 2
        )

    def __iter__(self):
        return iter((self.ratio, self.savings_percent, self.packed_bits))


def _round_half_up(x: float, places: int) -> float:
    shift = 10 ** places
    return math.floor(x * shift + 0.5) / shift


def compression_ratio(keep: int, group: int, bits: int) -> CompressionInfo:
    """Dense-vs-packed storage for one (N, M, bits) setting.

    ``dense = 32 * M`` bits per block against ``packed = N * bits +
    index_bits(N, M)``.
    """
    SparsitySpec(keep, group)  # validates the N:M pair
    if bits < 1 or bits > 32:
        raise ValueError(f"bits must be in [1, 32], got {bits}")
    return CompressionInfo(
        keep=keep,
        group=group,
        bits=bits,
        dense_bits=32 * group,
        packed_bits=bits_per_block(keep, group, bits),
    )


def comb_rank(positions, group: int) -> int:
    """Lexicographic rank of an ascending index tuple among C(group, k)."""
    rank = 0
    prev = -1
    k = len(positions)
    for i, p in enumerate(positions):
        for v in range(prev + 1, p):
            rank += math.comb(group - 1 - v, k - 1 - i)
        prev = p
    return rank


def comb_unrank(rank: int, group: int, keep: int) -> tuple[int, ...]:
    """Inverse of :func:`comb_rank`."""
    if rank >= math.comb(group, keep):
        raise CorruptStreamError(
            f"combinatorial rank {rank} out of range for C({group},{keep})"
        )
    out = []
    v = 0
    remaining = keep
    while remaining:
        width = math.comb(group - 1 - v, remaining - 1)
        if rank < width:
            out.append(v)
            remaining -= 1
        else:
            rank -= width
        v += 1
    return tuple(out)


class _BitWriter:
    """MSB-first bit accumulator."""

    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, value: int, width: int) -> None:
        self.acc = (self.acc << width) | (value & ((1 << width) - 1))
        self.nbits += width
        while self.nbits >= 8:
            self.nbits -= 8
            self.buf.append((self.acc >> self.nbits) & 0xFF)
        self.acc &= (1 << self.nbits) - 1

    def finish(self) -> bytes:
        if self.nbits:
            self.buf.append((self.acc << (8 - self.nbits)) & 0xFF)
            self.acc = 0
            self.nbits = 0
        return bytes(self.buf)


class _BitReader:
    """MSB-first bit consumer with exhaustion checks."""

    def __init__(self, data: bytes, total_bits: int):
        self.data = data
        self.total_bits = total_bits
        self.pos = 0

    def read(self, width: int) -> int:
        if self.pos + width > self.total_bits:
            raise CorruptStreamError("payload exhausted mid-record")
        out = 0
        for _ in range(width):
            byte = self.data[self.pos >> 3]
            out = (out << 1) | ((byte >> (7 - (self.pos & 7))) & 1)
            self.pos += 1
        return out


@dataclass(frozen=True)
class PackedTensor:
    """Header fields plus the packed payload of one tensor."""

    rows: int
    cols: int
    axis: str
    keep: int
    group: int
    bits: int
    scale: float  # float32-rounded step size
    payload: bytes

    @property
    def num_blocks(self) -> int:
        if self.axis == AXIS_INPUT:
            return (self.rows // self.group) * self.cols
        return (self.rows * self.cols) // self.group

    @property
    def payload_bits(self) -> int:
        return self.num_blocks * bits_per_block(self.keep, self.group, self.bits)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            _MAGIC, _VERSION, self.rows, self.cols, _AXIS_CODE[self.axis],
            self.keep, self.group, self.bits, self.scale,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PackedTensor":
        if len(blob) < HEADER_SIZE:
            raise CorruptStreamError("stream shorter than header")
        magic, version, rows, cols, axis_code, keep, group, bits, scale = (
            _HEADER.unpack_from(blob)
        )
        if magic != _MAGIC:
            raise CorruptStreamError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise CorruptStreamError(f"unsupported version {version}")
        if axis_code not in _AXIS_NAME:
            raise CorruptStreamError(f"unknown axis code {axis_code}")
        if bits not in (2, 3, 4, 8, 16):
            raise CorruptStreamError(f"unsupported bit-width {bits}")
        try:
            SparsitySpec(keep, group)
        except ValueError as exc:
            raise CorruptStreamError(str(exc)) from None
        pt = cls(
            rows=rows, cols=cols, axis=_AXIS_NAME[axis_code], keep=keep,
            group=group, bits=bits, scale=float(np.float32(scale)),
            payload=blob[HEADER_SIZE:],
        )
        length = rows if pt.axis == AXIS_INPUT else rows * cols
        if group == 0 or length % group != 0:
            raise CorruptStreamError(
                f"axis length {length} not divisible by group {group}"
            )
        expected = (pt.payload_bits + 7) // 8
        if len(pt.payload) != expected:
            raise CorruptStreamError(
                f"payload has {len(pt.payload)} bytes, expected {expected}"
            )
        return pt

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PackedTensor":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def encode(codes: np.ndarray, mask: np.ndarray, spec: SparsitySpec,
           qspec: QuantSpec) -> PackedTensor:
    """Pack integer codes + keep mask into a deterministic byte stream.

    Requires a weight-mode quantizer spec (the codec stores signed
    two's-complement values), a mask with exactly N survivors per block, and
    dimensions divisible by M along the block axis (the codec does not pad).
    """
    if qspec.mode != MODE_WEIGHT:
        raise ValueError("packed codec stores weight-symmetric codes only")
    codes = np.asarray(codes, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if codes.shape != mask.shape or codes.ndim != 2:
        raise MaskError(f"codes {codes.shape} and mask {mask.shape} must be equal 2-D shapes")
    if qspec.bits not in (2, 3, 4, 8, 16):
        raise ValueError(f"unsupported bit-width {qspec.bits}")
    if codes.size and (codes.min() < qspec.qn or codes.max() > qspec.qp):
        raise CodeRangeError(f"codes outside [{qspec.qn}, {qspec.qp}]")
    if np.any(codes[~mask]):
        raise MaskError("nonzero codes at pruned positions")
    rows, cols = codes.shape
    code_blocks, index = block_view(codes.astype(np.float64), spec.axis, spec.group)
    mask_blocks, _ = block_view(mask.astype(np.float64), spec.axis, spec.group)
    code_blocks = code_blocks.astype(np.int64)
    mask_blocks = mask_blocks.astype(bool)

    counts = mask_blocks.sum(axis=1)
    bad = np.nonzero(counts != spec.keep)[0]
    if bad.size:
        raise MaskError(
            f"block {bad[0]} has {counts[bad[0]]} survivors, expected {spec.keep}"
        )

    ibits = index_bits(spec.keep, spec.group)
    writer = _BitWriter()
    vmask = (1 << qspec.bits) - 1
    for b in range(code_blocks.shape[0]):
        positions = np.nonzero(mask_blocks[b])[0]
        if (spec.keep, spec.group) == (2, 4):
            writer.write(int(positions[0]), 2)
            writer.write(int(positions[1]), 2)
        else:
            writer.write(comb_rank(positions.tolist(), spec.group), ibits)
        for p in positions:
            writer.write(int(code_blocks[b, p]) & vmask, qspec.bits)
    return PackedTensor(
        rows=rows, cols=cols, axis=spec.axis, keep=spec.keep, group=spec.group,
        bits=qspec.bits, scale=float(np.float32(qspec.scale)),
        payload=writer.finish(),
    )


@dataclass(frozen=True)
class DecodeResult:
    codes: np.ndarray
    mask: np.ndarray
    spec: SparsitySpec
    qspec: QuantSpec

    @property
    def values(self) -> np.ndarray:
        """Dequantized matrix ``scale * codes`` (float64 of the f32 scale)."""
        return self.qspec.scale * self.codes


def decode(packed: PackedTensor) -> DecodeResult:
    """Exact inverse of :func:`encode`."""
    spec = SparsitySpec(packed.keep, packed.group, axis=packed.axis)
    qspec = QuantSpec(packed.bits, MODE_WEIGHT, scale=packed.scale)
    total_bits = packed.payload_bits
    if len(packed.payload) != (total_bits + 7) // 8:
        raise CorruptStreamError("payload length inconsistent with header")
    reader = _BitReader(packed.payload, total_bits)
    ibits = index_bits(spec.keep, spec.group)
    sign_bit = 1 << (packed.bits - 1)
    full = 1 << packed.bits

    nb = packed.num_blocks
    code_blocks = np.zeros((nb, spec.group), dtype=np.int64)
    mask_blocks = np.zeros((nb, spec.group), dtype=bool)
    for b in range(nb):
        if (spec.keep, spec.group) == (2, 4):
            p0 = reader.read(2)
            p1 = reader.read(2)
            if p0 >= p1:
                raise CorruptStreamError(
                    f"block {b}: positions {p0},{p1} not strictly ascending"
                )
            positions = (p0, p1)
        else:
            positions = comb_unrank(reader.read(ibits), spec.group, spec.keep)
        for p in positions:
            raw = reader.read(packed.bits)
            code_blocks[b, p] = raw - full if raw & sign_bit else raw
            mask_blocks[b, p] = True
    # trailing padding bits must be zero
    for pos in range(total_bits, 8 * len(packed.payload)):
        if (packed.payload[pos >> 3] >> (7 - (pos & 7))) & 1:
            raise CorruptStreamError("nonzero padding bits in final byte")

    _, index = block_view(
        np.zeros((packed.rows, packed.cols)), spec.axis, spec.group
    )
    codes = block_scatter(code_blocks, index, packed.rows, packed.cols,
                          dtype=np.int64)
    mask = block_scatter(mask_blocks, index, packed.rows, packed.cols,
                         dtype=bool, fill=False)
    return DecodeResult(codes=codes, mask=mask, spec=spec, qspec=qspec)
