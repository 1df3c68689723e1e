import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { KernelError, NmQuant, matrix } from "../src/index.js";

let nm: NmQuant;

beforeAll(() => {
  nm = new NmQuant();
});

afterAll(() => {
  nm.close();
});

describe("error mapping", () => {
  test("wrong dtype is rejected locally with a typed error", async () => {
    const bogus = {
      rows: 1,
      cols: 2,
      data: new Float32Array([1, 2]) as unknown as Float64Array,
    };
    await expect(nm.quantize(bogus, { bits: 4, scale: 1 })).rejects.toThrow(
      TypeError,
    );
  });

  test("length mismatch is rejected locally", async () => {
    const bogus = { rows: 2, cols: 2, data: new Float64Array(3) };
    await expect(nm.sqnrDb(bogus, bogus)).rejects.toThrow(TypeError);
  });

  test("core errors surface with the core's message", async () => {
    const w = matrix(1, 1, [1.0]);
    const err = await nm
      .quantize(w, { bits: 4, scale: -1 })
      .then(() => null)
      .catch((e: unknown) => e as KernelError);
    expect(err).toBeInstanceOf(KernelError);
    expect(err!.kind).toBe("ScaleError");
    expect(err!.message).toContain("scale must be finite and > 0");
  });

  test("indivisible block length propagates the core's message", async () => {
    const w = matrix(3, 1, [1, 2, 3]);
    const err = await nm
      .sparsify(w, { keep: 2, group: 4 })
      .then(() => null)
      .catch((e: unknown) => e as KernelError);
    expect(err).toBeInstanceOf(KernelError);
    expect(err!.message).toContain("not divisible");
  });

  test("corrupt packed stream is a typed error", async () => {
    const err = await nm
      .decode(new Uint8Array([1, 2, 3]))
      .then(() => null)
      .catch((e: unknown) => e as KernelError);
    expect(err).toBeInstanceOf(KernelError);
    expect(err!.kind).toBe("CorruptStreamError");
  });

  test("the client survives errors and keeps serving", async () => {
    await expect(nm.compressionRatio(2, 4, 4)).resolves.toMatchObject({
      ratio: 10.7,
    });
  });
});
