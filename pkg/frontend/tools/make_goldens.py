"""Generate the binding-parity corpus.

Computes reference outputs for 100 seeded inputs by calling the core library
directly (no subprocess), so the TypeScript tests can verify that results
arriving through the kernel protocol are bit-exact. Matrices are embedded as
base64 MTRX blobs; scalars as JSON numbers (shortest-round-trip on both
sides of the boundary preserves the exact double).

Usage: python3 tools/make_goldens.py > test/golden/parity.json
"""

import base64
import json
import math
import sys

import numpy as np

from nmquant.metrics import column_cosines, sqnr_db
from nmquant.packing import encode
from nmquant.quantize import QuantSpec, init_scale, quantize
from nmquant.sparsity import SparsitySpec, sparsify
from nmquant.tensor import Matrix, Rng, rand_matrix

BITS_CYCLE = (2, 3, 4, 8, 16)
PRESETS = ((2, 4), (2, 8), (2, 16))
CODEC_BITS = (2, 4, 8, 16)  # 3-bit codes pack fine but keep the cycle small


def b64(m) -> str:
    if isinstance(m, Matrix):
        return base64.b64encode(m.to_bytes()).decode()
    return base64.b64encode(Matrix(np.asarray(m, dtype=np.float64)).to_bytes()).decode()


def main() -> None:
    cases = []
    for seed in range(100):
        rng = Rng(seed)
        w = rand_matrix(rng, 16, 4, "gaussian")
        what = rand_matrix(rng, 16, 4, "gaussian")
        bits = BITS_CYCLE[seed % len(BITS_CYCLE)]
        keep, group = PRESETS[seed % len(PRESETS)]
        qspec = QuantSpec(bits)
        scale = init_scale(w, qspec).scale
        q = quantize(w, qspec.with_scale(scale))

        sspec = SparsitySpec(keep, group)
        sp = sparsify(w, sspec)

        codec_bits = CODEC_BITS[seed % len(CODEC_BITS)]
        cspec = QuantSpec(codec_bits)
        cscale = init_scale(sp.values, cspec).scale
        codes = np.where(sp.mask, quantize(sp.values, cspec.with_scale(cscale)).codes, 0)
        packed = encode(codes, sp.mask, sspec, cspec.with_scale(cscale))

        db = sqnr_db(w, q.values)
        cases.append({
            "seed": seed,
            "w": b64(w),
            "what": b64(what),
            "bits": bits,
            "scale": scale,
            "quantize": {
                "values": b64(q.values),
                "codes": b64(q.codes),
                "clamp_mask": b64(q.clamp_mask),
            },
            "keep": keep,
            "group": group,
            "sparsify": {
                "values": b64(sp.values),
                "mask": b64(sp.mask),
                "thresholds": b64(sp.thresholds.reshape(1, -1)),
            },
            "sqnr_db_w_quantized": "inf" if math.isinf(db) else db,
            "sqnr_db_w_what": sqnr_db(w, what),
            "cosines_w_what": b64(column_cosines(w, what).reshape(1, -1)),
            "codec": {
                "bits": codec_bits,
                "scale": cscale,
                "codes": b64(codes),
                "mask": b64(sp.mask),
                "packed": base64.b64encode(packed.to_bytes()).decode(),
            },
        })
    json.dump({"cases": cases}, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
