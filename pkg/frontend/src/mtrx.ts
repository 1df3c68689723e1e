/**
 * Binary matrix interchange ("MTRX" dumps).
 *
 * Layout: 16-byte header — magic "MTRX", u32 rows, u32 cols, 4 reserved
 * zero bytes, all little-endian — followed by rows*cols little-endian
 * float64 values in row-major order. Float64 payloads cross the process
 * boundary bit-exactly through this format.
 */

const MAGIC = 0x5852544d; // "MTRX" read as LE u32
const HEADER_BYTES = 16;

export interface MatrixData {
  rows: number;
  cols: number;
  /** row-major values, length rows*cols */
  data: Float64Array;
}

export class MatrixFormatError extends Error {}

export function matrix(rows: number, cols: number, values: ArrayLike<number>): MatrixData {
  const data = Float64Array.from(values);
  if (data.length !== rows * cols) {
    throw new MatrixFormatError(
      `expected ${rows * cols} values for ${rows}x${cols}, got ${data.length}`,
    );
  }
  return { rows, cols, data };
}

export function encodeMatrix(m: MatrixData): Uint8Array {
  if (!(m.data instanceof Float64Array)) {
    throw new MatrixFormatError("matrix data must be a Float64Array");
  }
  if (m.data.length !== m.rows * m.cols) {
    throw new MatrixFormatError(
      `data length ${m.data.length} != rows*cols ${m.rows * m.cols}`,
    );
  }
  const out = new Uint8Array(HEADER_BYTES + 8 * m.data.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, MAGIC, true);
  view.setUint32(4, m.rows, true);
  view.setUint32(8, m.cols, true);
  for (let i = 0; i < m.data.length; i++) {
    view.setFloat64(HEADER_BYTES + 8 * i, m.data[i], true);
  }
  return out;
}

export function decodeMatrix(bytes: Uint8Array): MatrixData {
  if (bytes.length < HEADER_BYTES) {
    throw new MatrixFormatError("matrix dump truncated: missing header");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (view.getUint32(0, true) !== MAGIC) {
    throw new MatrixFormatError("bad matrix magic");
  }
  const rows = view.getUint32(4, true);
  const cols = view.getUint32(8, true);
  const expected = HEADER_BYTES + 8 * rows * cols;
  if (bytes.length !== expected) {
    throw new MatrixFormatError(
      `matrix dump has ${bytes.length} bytes, expected ${expected}`,
    );
  }
  const data = new Float64Array(rows * cols);
  for (let i = 0; i < data.length; i++) {
    data[i] = view.getFloat64(HEADER_BYTES + 8 * i, true);
  }
  return { rows, cols, data };
}

export function matrixToBase64(m: MatrixData): string {
  return Buffer.from(encodeMatrix(m)).toString("base64");
}

export function matrixFromBase64(text: string): MatrixData {
  return decodeMatrix(new Uint8Array(Buffer.from(text, "base64")));
}
