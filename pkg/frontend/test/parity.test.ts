/**
 * Cross-boundary parity: every exposed function must agree bit-exactly with
 * core-computed goldens (100 seeded cases generated by
 * tools/make_goldens.py via direct library calls, no subprocess).
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { NmQuant, matrixToBase64 } from "../src/index.js";
import { matrixFromBase64 } from "../src/mtrx.js";

const here = dirname(fileURLToPath(import.meta.url));

interface GoldenCase {
  seed: number;
  w: string;
  what: string;
  bits: number;
  scale: number;
  quantize: { values: string; codes: string; clamp_mask: string };
  keep: number;
  group: number;
  sparsify: { values: string; mask: string; thresholds: string };
  sqnr_db_w_quantized: number | "inf";
  sqnr_db_w_what: number;
  cosines_w_what: string;
  codec: { bits: number; scale: number; codes: string; mask: string; packed: string };
}

const golden: { cases: GoldenCase[] } = JSON.parse(
  readFileSync(join(here, "golden", "parity.json"), "utf8"),
);

let nm: NmQuant;

beforeAll(() => {
  nm = new NmQuant();
});

afterAll(() => {
  nm.close();
});

describe("binding parity against core goldens", () => {
  test("corpus has 100 seeds", () => {
    expect(golden.cases.length).toBe(100);
  });

  test("version mirrors the core version", async () => {
    const pkg = JSON.parse(readFileSync(join(here, "..", "package.json"), "utf8"));
    expect(await nm.version()).toBe(pkg.version);
  });

  test("quantize is bit-exact on every seed", async () => {
    for (const c of golden.cases) {
      const out = await nm.quantize(matrixFromBase64(c.w), {
        bits: c.bits,
        scale: c.scale,
      });
      expect(matrixToBase64(out.values)).toBe(c.quantize.values);
      expect(matrixToBase64(out.codes)).toBe(c.quantize.codes);
      expect(matrixToBase64(out.clampMask)).toBe(c.quantize.clamp_mask);
    }
  });

  test("sparsify is bit-exact on every seed", async () => {
    for (const c of golden.cases) {
      const out = await nm.sparsify(matrixFromBase64(c.w), {
        keep: c.keep,
        group: c.group,
      });
      expect(matrixToBase64(out.values)).toBe(c.sparsify.values);
      expect(matrixToBase64(out.mask)).toBe(c.sparsify.mask);
      expect(matrixToBase64(out.thresholds)).toBe(c.sparsify.thresholds);
    }
  });

  test("sqnrDb matches exactly, including the infinite sentinel", async () => {
    for (const c of golden.cases) {
      const w = matrixFromBase64(c.w);
      const quantized = (
        await nm.quantize(w, { bits: c.bits, scale: c.scale })
      ).values;
      const dbQ = await nm.sqnrDb(w, quantized);
      const expected =
        c.sqnr_db_w_quantized === "inf" ? Infinity : c.sqnr_db_w_quantized;
      expect(Object.is(dbQ, expected)).toBe(true);
      const dbW = await nm.sqnrDb(w, matrixFromBase64(c.what));
      expect(Object.is(dbW, c.sqnr_db_w_what)).toBe(true);
    }
    const w = matrixFromBase64(golden.cases[0].w);
    expect(await nm.sqnrDb(w, w)).toBe(Infinity);
  });

  test("columnCosines matches bit-exactly", async () => {
    for (const c of golden.cases) {
      const cos = await nm.columnCosines(
        matrixFromBase64(c.w),
        matrixFromBase64(c.what),
      );
      const expected = matrixFromBase64(c.cosines_w_what).data;
      expect(cos.length).toBe(expected.length);
      for (let i = 0; i < cos.length; i++) {
        expect(Object.is(cos[i], expected[i])).toBe(true);
      }
    }
  });

  test("encode produces the core's exact bytes and decode inverts it", async () => {
    for (const c of golden.cases) {
      const codes = matrixFromBase64(c.codec.codes);
      const mask = matrixFromBase64(c.codec.mask);
      const packed = await nm.encode(codes, mask, {
        keep: c.keep,
        group: c.group,
        bits: c.codec.bits,
        scale: c.codec.scale,
      });
      expect(Buffer.from(packed).toString("base64")).toBe(c.codec.packed);
      const out = await nm.decode(packed);
      expect(matrixToBase64(out.codes)).toBe(c.codec.codes);
      expect(matrixToBase64(out.mask)).toBe(c.codec.mask);
      expect(out.keep).toBe(c.keep);
      expect(out.group).toBe(c.group);
      expect(out.bits).toBe(c.codec.bits);
    }
  });

  test("compressionRatio reproduces the storage table", async () => {
    expect((await nm.compressionRatio(2, 4, 4)).ratio).toBe(10.7);
    const cells: Array<[number, number, number, number, number, number]> = [
      [2, 4, 8, 6.4, 84.38, 20],
      [2, 4, 4, 10.7, 90.63, 12],
      [2, 4, 2, 16.0, 93.75, 8],
      [2, 8, 8, 12.2, 91.8, 21],
      [2, 8, 4, 19.7, 94.92, 13],
      [2, 8, 2, 28.4, 96.48, 9],
    ];
    for (const [keep, group, bits, ratio, savings, packedBits] of cells) {
      const info = await nm.compressionRatio(keep, group, bits);
      expect(info.ratio).toBe(ratio);
      expect(info.savingsPercent).toBe(savings);
      expect(info.packedBits).toBe(packedBits);
    }
  });

  test("core-seeded matrices are reproducible through the boundary", async () => {
    const a = await nm.randMatrix(7, 6, 5);
    const b = await nm.randMatrix(7, 6, 5);
    expect(matrixToBase64(a)).toBe(matrixToBase64(b));
  });

  test("pipelined concurrent calls are answered correctly", async () => {
    const cases = golden.cases.slice(0, 10);
    const results = await Promise.all(
      cases.map((c) =>
        nm.quantize(matrixFromBase64(c.w), { bits: c.bits, scale: c.scale }),
      ),
    );
    results.forEach((out, i) => {
      expect(matrixToBase64(out.values)).toBe(cases[i].quantize.values);
    });
  });
});
