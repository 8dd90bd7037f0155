import { describe, expect, it } from "vitest";

import type { KernelMemory } from "../src/kernels.js";
import { INT3, healKernel, scanKernel } from "../src/kernels.js";

const memoryOver = (bytes: Uint8Array): KernelMemory => ({
  load: (offset) => bytes[offset],
  store: (offset, value) => {
    bytes[offset] = value;
  },
});

const lcg = (seed: number) => () => {
  seed = (seed * 48271) % 2147483647;
  return seed;
};

describe("scan kernel", () => {
  it("reports 0 on clean bytes and 1 on a hook", () => {
    const clean = Uint8Array.of(0x55, 0x48, 0x89, 0xe5, 0xc3);
    expect(scanKernel(memoryOver(clean), [0, 1, 2, 3, 4])).toBe(0);
    const hooked = Uint8Array.from(clean);
    hooked[0] = INT3;
    expect(scanKernel(memoryOver(hooked), [0, 1, 2, 3, 4])).toBe(1);
  });

  it("only inspects the listed offsets", () => {
    const bytes = Uint8Array.of(0x90, INT3, 0x90);
    expect(scanKernel(memoryOver(bytes), [0, 2])).toBe(0);
    expect(scanKernel(memoryOver(bytes), [1])).toBe(1);
    expect(scanKernel(memoryOver(bytes), [])).toBe(0);
  });

  it("matches a brute-force sweep on random buffers", () => {
    const rand = lcg(7);
    for (let round = 0; round < 200; round++) {
      const bytes = Uint8Array.from({ length: 48 }, () => rand() & 0xff);
      const offsets = Array.from({ length: rand() % 10 }, () => rand() % 48);
      const expected = offsets.some((offset) => bytes[offset] === INT3) ? 1 : 0;
      expect(scanKernel(memoryOver(bytes), offsets)).toBe(expected);
    }
  });
});

describe("heal kernel", () => {
  it("rewrites only deviating offsets", () => {
    const golden = Uint8Array.of(0x55, 0x48, 0x89, 0xe5, 0xc3);
    const live = Uint8Array.from(golden);
    live[0] = INT3;
    live[3] = 0x00;
    const offsets = [0, 1, 2, 3, 4];
    const originals = Uint8Array.from(offsets, (o) => golden[o]);
    const written = healKernel(memoryOver(live), offsets, originals);
    expect(written).toBe(2);
    expect(live).toEqual(golden);
  });

  it("is idempotent", () => {
    const golden = Uint8Array.of(1, 2, 3, 4);
    const live = Uint8Array.of(1, INT3, 3, 4);
    const memory = memoryOver(live);
    expect(healKernel(memory, [0, 1, 2, 3], golden)).toBe(1);
    expect(healKernel(memory, [0, 1, 2, 3], golden)).toBe(0);
  });

  it("refuses more offsets than original bytes", () => {
    expect(() => healKernel(memoryOver(Uint8Array.of(0)), [0, 0], Uint8Array.of(0))).toThrow(
      RangeError,
    );
  });

  it("touches nothing outside the listed offsets", () => {
    const live = Uint8Array.of(9, 9, 9, 9);
    healKernel(memoryOver(live), [1], Uint8Array.of(5));
    expect([...live]).toEqual([9, 5, 9, 9]);
  });
});
