/**
 * TypeScript bindings for the sparse-quantization core.
 *
 * Exposes the pointwise toolkit operations — quantize, sparsify, deviation
 * metrics, the packed codec, and storage accounting — to JavaScript callers
 * working with plain contiguous Float64Array matrices. Results are
 * bit-exactly the core's: float64 payloads travel as binary MTRX blobs,
 * never through decimal text. Each {@link NmQuant} instance owns one core
 * subprocess; calls are reentrant and answered in order.
 */

import { KernelClient, KernelError, type KernelOptions } from "./kernel.js";
import {
  MatrixData,
  MatrixFormatError,
  decodeMatrix,
  encodeMatrix,
  matrix,
  matrixFromBase64,
  matrixToBase64,
} from "./mtrx.js";

export {
  KernelError,
  MatrixFormatError,
  decodeMatrix,
  encodeMatrix,
  matrix,
  matrixFromBase64,
  matrixToBase64,
};
export type { MatrixData };

export type QuantMode = "weight-symmetric" | "activation-unsigned";
export type BlockAxis = "input-dim" | "flat-row-major";

export interface QuantizeOptions {
  bits: number;
  scale: number;
  mode?: QuantMode;
  halvedUnsigned?: boolean;
}

export interface QuantizeResult {
  values: MatrixData;
  /** integer codes, exact in float64 */
  codes: MatrixData;
  /** 1.0 where the clamp saturated, else 0.0 */
  clampMask: MatrixData;
}

export interface SparsifyOptions {
  keep: number;
  group: number;
  axis?: BlockAxis;
  pad?: boolean;
}

export interface SparsifyResult {
  values: MatrixData;
  /** 1.0 for surviving positions, else 0.0 */
  mask: MatrixData;
  /** per-block selection thresholds (1 x num_blocks) */
  thresholds: MatrixData;
}

export interface EncodeOptions {
  keep: number;
  group: number;
  bits: number;
  scale: number;
  axis?: BlockAxis;
}

export interface DecodeResult {
  codes: MatrixData;
  mask: MatrixData;
  keep: number;
  group: number;
  axis: BlockAxis;
  bits: number;
  scale: number;
}

export interface CompressionInfo {
  ratio: number;
  savingsPercent: number;
  packedBits: number;
}

function checkMatrix(m: MatrixData, name: string): MatrixData {
  if (!(m.data instanceof Float64Array)) {
    throw new TypeError(`${name} must carry a Float64Array`);
  }
  if (m.data.length !== m.rows * m.cols) {
    throw new TypeError(
      `${name} data length ${m.data.length} != rows*cols ${m.rows * m.cols}`,
    );
  }
  return m;
}

export class NmQuant {
  private client: KernelClient;

  constructor(options: KernelOptions = {}) {
    this.client = new KernelClient(options);
  }

  async version(): Promise<string> {
    const reply = await this.client.request("version");
    return String(reply.version);
  }

  /** Core-seeded random matrix (shared fuzz corpora with the core RNG). */
  async randMatrix(
    seed: number,
    rows: number,
    cols: number,
    dist: "gaussian" | "uniform" = "gaussian",
  ): Promise<MatrixData> {
    const reply = await this.client.request("rand_matrix", { seed, rows, cols, dist });
    return matrixFromBase64(String(reply.w));
  }

  async quantize(w: MatrixData, opts: QuantizeOptions): Promise<QuantizeResult> {
    const reply = await this.client.request("quantize", {
      w: matrixToBase64(checkMatrix(w, "w")),
      bits: opts.bits,
      scale: opts.scale,
      mode: opts.mode ?? "weight-symmetric",
      halved_unsigned: opts.halvedUnsigned ?? false,
    });
    return {
      values: matrixFromBase64(String(reply.values)),
      codes: matrixFromBase64(String(reply.codes)),
      clampMask: matrixFromBase64(String(reply.clamp_mask)),
    };
  }

  async sparsify(w: MatrixData, opts: SparsifyOptions): Promise<SparsifyResult> {
    const reply = await this.client.request("sparsify", {
      w: matrixToBase64(checkMatrix(w, "w")),
      keep: opts.keep,
      group: opts.group,
      axis: opts.axis ?? "input-dim",
      pad: opts.pad ?? false,
    });
    return {
      values: matrixFromBase64(String(reply.values)),
      mask: matrixFromBase64(String(reply.mask)),
      thresholds: matrixFromBase64(String(reply.thresholds)),
    };
  }

  /** Signal-to-quantization-noise ratio in dB; Infinity for zero noise. */
  async sqnrDb(w: MatrixData, what: MatrixData): Promise<number> {
    const reply = await this.client.request("sqnr_db", {
      w: matrixToBase64(checkMatrix(w, "w")),
      what: matrixToBase64(checkMatrix(what, "what")),
    });
    return reply.db === "inf" ? Infinity : Number(reply.db);
  }

  async columnCosines(w: MatrixData, what: MatrixData): Promise<Float64Array> {
    const reply = await this.client.request("column_cosines", {
      w: matrixToBase64(checkMatrix(w, "w")),
      what: matrixToBase64(checkMatrix(what, "what")),
    });
    return matrixFromBase64(String(reply.cosines)).data;
  }

  /** Pack integer codes + keep mask into ".sqpk" bytes. */
  async encode(
    codes: MatrixData,
    mask: MatrixData,
    opts: EncodeOptions,
  ): Promise<Uint8Array> {
    const reply = await this.client.request("encode", {
      codes: matrixToBase64(checkMatrix(codes, "codes")),
      mask: matrixToBase64(checkMatrix(mask, "mask")),
      keep: opts.keep,
      group: opts.group,
      bits: opts.bits,
      scale: opts.scale,
      axis: opts.axis ?? "input-dim",
    });
    return new Uint8Array(Buffer.from(String(reply.packed), "base64"));
  }

  async decode(packed: Uint8Array): Promise<DecodeResult> {
    const reply = await this.client.request("decode", {
      packed: Buffer.from(packed).toString("base64"),
    });
    return {
      codes: matrixFromBase64(String(reply.codes)),
      mask: matrixFromBase64(String(reply.mask)),
      keep: Number(reply.keep),
      group: Number(reply.group),
      axis: String(reply.axis) as BlockAxis,
      bits: Number(reply.bits),
      scale: Number(reply.scale),
    };
  }

  async compressionRatio(
    keep: number,
    group: number,
    bits: number,
  ): Promise<CompressionInfo> {
    const reply = await this.client.request("compression_ratio", { keep, group, bits });
    return {
      ratio: Number(reply.ratio),
      savingsPercent: Number(reply.savings_percent),
      packedBits: Number(reply.packed_bits),
    };
  }

  close(): void {
    this.client.close();
  }
}
