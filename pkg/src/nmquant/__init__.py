"""N:M structured sparsity + low-bit quantization toolkit.

Compresses weight matrices by composing magnitude N:M sparsification with
learned-step-size fake quantization, measures the resulting deviation
(column cosines, SQNR), verifies the sparsification error bounds, packs the
result into a bit-exact on-disk format, and trains small networks through
the compressed forward path with an angular-alignment regularizer.
"""

__version__ = "0.1.0"

from .bounds import (
    BoundCheck,
    BoundViolation,
    check_bounds,
    energy_ratio,
    gap_identity,
    bounds_campaign,
)
from .metrics import DeviationReport, column_cosines, deviation_report, sqnr_db
from .packing import (
    CompressionInfo,
    CorruptStreamError,
    PackedTensor,
    compression_ratio,
    decode,
    encode,
)
from .quantize import QuantSpec, QuantResult, init_scale, quantize, quantize_backward
from .regularize import (
    LossBreakdown,
    RegSpec,
    auto_lambda,
    cos_reg,
    l2_reg,
    reg_backward,
    upper_bound,
)
from .sparsity import SparseResult, SparsitySpec, mask_apply, sparsify, sparsify_oracle
from .tensor import (
    AXIS_FLAT,
    AXIS_INPUT,
    BlockCursor,
    BlockError,
    Matrix,
    Rng,
    ShapeError,
    blocks,
    matmul,
    rand_matrix,
)

__all__ = [
    "AXIS_FLAT",
    "AXIS_INPUT",
    "BlockCursor",
    "BlockError",
    "BoundCheck",
    "BoundViolation",
    "CompressionInfo",
    "CorruptStreamError",
    "DeviationReport",
    "LossBreakdown",
    "Matrix",
    "PackedTensor",
    "QuantResult",
    "QuantSpec",
    "RegSpec",
    "Rng",
    "ShapeError",
    "SparseResult",
    "SparsitySpec",
    "auto_lambda",
    "blocks",
    "check_bounds",
    "column_cosines",
    "compression_ratio",
    "cos_reg",
    "decode",
    "deviation_report",
    "encode",
    "energy_ratio",
    "gap_identity",
    "init_scale",
    "l2_reg",
    "mask_apply",
    "matmul",
    "quantize",
    "quantize_backward",
    "rand_matrix",
    "reg_backward",
    "sparsify",
    "sparsify_oracle",
    "sqnr_db",
    "bounds_campaign",
    "upper_bound",
]
