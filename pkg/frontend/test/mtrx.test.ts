import { describe, expect, test } from "vitest";

import {
  decodeMatrix,
  encodeMatrix,
  matrix,
  matrixFromBase64,
  matrixToBase64,
  MatrixFormatError,
} from "../src/mtrx.js";

describe("matrix binary format", () => {
  test("round trip is bit exact", () => {
    const values = [1.5, -2.25, 1e-300, Number.MIN_VALUE, 7.1, 0, -0, 3.3];
    const m = matrix(2, 4, values);
    const back = decodeMatrix(encodeMatrix(m));
    expect(back.rows).toBe(2);
    expect(back.cols).toBe(4);
    for (let i = 0; i < values.length; i++) {
      expect(Object.is(back.data[i], m.data[i])).toBe(true);
    }
  });

  test("header carries magic and dims", () => {
    const bytes = encodeMatrix(matrix(1, 2, [1, 2]));
    expect(bytes.length).toBe(16 + 16);
    expect(String.fromCharCode(...bytes.slice(0, 4))).toBe("MTRX");
  });

  test("rejects bad magic", () => {
    const bytes = encodeMatrix(matrix(1, 1, [1]));
    bytes[0] = 0x58;
    expect(() => decodeMatrix(bytes)).toThrow(MatrixFormatError);
  });

  test("rejects truncated payload", () => {
    const bytes = encodeMatrix(matrix(1, 2, [1, 2]));
    expect(() => decodeMatrix(bytes.slice(0, bytes.length - 1))).toThrow(
      MatrixFormatError,
    );
  });

  test("rejects mismatched lengths", () => {
    expect(() => matrix(2, 2, [1, 2, 3])).toThrow(MatrixFormatError);
  });

  test("base64 helpers invert each other", () => {
    const m = matrix(2, 2, [0.1, 0.2, 0.3, 0.4]);
    const again = matrixFromBase64(matrixToBase64(m));
    expect(Array.from(again.data)).toEqual(Array.from(m.data));
  });
});
